#pragma once

#include <filesystem>
#include <string>

namespace lrb {

/// Write-then-rename so a killed run never leaves a truncated file behind.
void atomic_write(const std::filesystem::path& path, const std::string& content);

}  // namespace lrb
