#include "lrb/report_io.hpp"

#include <fstream>

#include "lrb/errors.hpp"

namespace lrb {

void atomic_write(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("atomic_write: cannot open " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw DataError("atomic_write: short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace lrb
