#include "lrb/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "lrb/errors.hpp"

namespace lrb {

Dataset synth_clusters(int num_classes, std::size_t dim, std::size_t per_class, double spread,
                       RngStream& rng) {
  if (num_classes < 1 || dim < 1 || per_class < 1) {
    throw ConfigError("synth_clusters: counts must be >= 1");
  }
  if (spread <= 0.0) throw ConfigError("synth_clusters: spread must be positive");

  RngStream mean_rng = rng.child("means");
  std::vector<std::vector<double>> means(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    auto v = mean_rng.normal_vec(dim);
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) norm = 1.0;
    for (double& x : v) x /= norm;
    means[c] = std::move(v);
  }

  const std::size_t n = static_cast<std::size_t>(num_classes) * per_class;
  Dataset ds;
  ds.num_classes = num_classes;
  ds.features = Matrix(n, dim);
  ds.labels.resize(n);
  RngStream sample_rng = rng.child("samples");
  std::size_t row = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i, ++row) {
      ds.labels[row] = c;
      for (std::size_t j = 0; j < dim; ++j) {
        ds.features(row, j) = means[c][j] + spread * sample_rng.normal();
      }
    }
  }
  return ds;
}

std::vector<IndexList> label_shard_partition(const Dataset& ds, std::size_t num_clients,
                                             int labels_per_client, RngStream& rng) {
  if (num_clients == 0) throw ConfigError("label_shard_partition: need at least one client");
  if (labels_per_client < 1 || labels_per_client > ds.num_classes) {
    throw ConfigError("label_shard_partition: labels_per_client must be in [1, " +
                      std::to_string(ds.num_classes) + "], got " +
                      std::to_string(labels_per_client));
  }

  // Which clients hold each label.
  std::vector<std::vector<std::size_t>> holders(ds.num_classes);
  RngStream pick_rng = rng.child("labels");
  for (std::size_t k = 0; k < num_clients; ++k) {
    RngStream client_rng = pick_rng.child(k);
    const auto chosen = sample_without_replacement(
        ds.num_classes, static_cast<std::size_t>(labels_per_client), client_rng);
    for (auto label : chosen) holders[label].push_back(k);
  }

  // Shuffle each label's sample pool, then deal round-robin to its holders.
  std::vector<IndexList> shards(num_clients);
  RngStream deal_rng = rng.child("deal");
  for (int label = 0; label < ds.num_classes; ++label) {
    if (holders[label].empty()) continue;
    IndexList pool;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.labels[i] == label) pool.push_back(i);
    }
    RngStream label_rng = deal_rng.child(static_cast<std::uint64_t>(label));
    const auto order = sample_without_replacement(pool.size(), pool.size(), label_rng);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      shards[holders[label][i % holders[label].size()]].push_back(pool[order[i]]);
    }
  }

  for (std::size_t k = 0; k < num_clients; ++k) {
    if (shards[k].empty()) {
      throw DataError("label_shard_partition: client " + std::to_string(k) +
                      " received no samples; provide more data or fewer clients");
    }
    std::sort(shards[k].begin(), shards[k].end());
  }
  return shards;
}

double gamma_draw(double shape, RngStream& rng) {
  if (shape <= 0.0) throw ConfigError("gamma_draw: shape must be positive");
  // Marsaglia-Tsang squeeze, with the alpha < 1 boost.
  if (shape < 1.0) {
    const double u = rng.uniform();
    return gamma_draw(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = rng.normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<IndexList> dirichlet_partition(const Dataset& ds, std::size_t num_clients,
                                           double alpha, RngStream& rng) {
  if (num_clients == 0) throw ConfigError("dirichlet_partition: need at least one client");
  if (alpha <= 0.0) throw ConfigError("dirichlet_partition: alpha must be positive");

  constexpr int kMaxRetries = 20;
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    RngStream attempt_rng = rng.child("attempt", static_cast<std::uint64_t>(attempt));

    // Per-client class proportion vectors pi_k ~ Dir(alpha * 1).
    std::vector<std::vector<double>> pi(num_clients, std::vector<double>(ds.num_classes));
    for (std::size_t k = 0; k < num_clients; ++k) {
      RngStream client_rng = attempt_rng.child("pi").child(k);
      double sum = 0.0;
      for (int c = 0; c < ds.num_classes; ++c) {
        pi[k][c] = gamma_draw(alpha, client_rng);
        sum += pi[k][c];
      }
      for (int c = 0; c < ds.num_classes; ++c) pi[k][c] /= sum;
    }

    // Each sample of class c picks its client with probability
    // proportional to pi_k[c].
    std::vector<std::vector<double>> cdf(ds.num_classes, std::vector<double>(num_clients));
    for (int c = 0; c < ds.num_classes; ++c) {
      double total = 0.0;
      for (std::size_t k = 0; k < num_clients; ++k) total += pi[k][c];
      double acc = 0.0;
      for (std::size_t k = 0; k < num_clients; ++k) {
        acc += pi[k][c] / total;
        cdf[c][k] = acc;
      }
      cdf[c][num_clients - 1] = 1.0;
    }

    std::vector<IndexList> shards(num_clients);
    RngStream assign_rng = attempt_rng.child("assign");
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const double u = assign_rng.uniform();
      const auto& col = cdf[ds.labels[i]];
      const std::size_t k = static_cast<std::size_t>(
          std::lower_bound(col.begin(), col.end(), u) - col.begin());
      shards[std::min(k, num_clients - 1)].push_back(i);
    }

    const bool any_empty =
        std::any_of(shards.begin(), shards.end(), [](const IndexList& s) { return s.empty(); });
    if (!any_empty) return shards;
  }
  throw DataError("dirichlet_partition: produced an empty shard in " +
                  std::to_string(kMaxRetries) + " attempts (alpha=" + std::to_string(alpha) +
                  ", clients=" + std::to_string(num_clients) + ")");
}

SplitResult split_and_subsample(const Dataset& ds, const IndexList& shard,
                                double train_fraction, double subsample_fraction,
                                RngStream& rng) {
  if (shard.empty()) throw DataError("split_and_subsample: empty shard");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split_and_subsample: train_fraction must be in (0, 1)");
  }
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
    throw ConfigError("split_and_subsample: subsample_fraction must be in (0, 1]");
  }

  std::map<int, IndexList> by_label;
  for (auto idx : shard) by_label[ds.labels[idx]].push_back(idx);

  SplitResult out;
  RngStream split_rng = rng.child("split");
  for (auto& [label, pool] : by_label) {
    RngStream label_rng = split_rng.child(static_cast<std::uint64_t>(label));
    const auto order = sample_without_replacement(pool.size(), pool.size(), label_rng);
    const std::size_t n_train = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(pool.size())));
    for (std::size_t i = 0; i < pool.size(); ++i) {
      (i < n_train ? out.train : out.test).push_back(pool[order[i]]);
    }
  }
  if (subsample_fraction < 1.0) {
    RngStream sub_rng = rng.child("subsample");
    const std::size_t keep = static_cast<std::size_t>(
        std::llround(subsample_fraction * static_cast<double>(out.train.size())));
    const auto chosen = sample_without_replacement(out.train.size(), keep, sub_rng);
    IndexList kept;
    kept.reserve(keep);
    for (auto i : chosen) kept.push_back(out.train[i]);
    out.train = std::move(kept);
  }
  if (out.train.empty()) {
    throw DataError("split_and_subsample: train side empty after subsampling");
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

Dataset gather(const Dataset& ds, const IndexList& indices) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.features = Matrix(indices.size(), ds.features.cols);
  out.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    out.labels[i] = ds.labels[src];
    std::copy_n(&ds.features.data[src * ds.features.cols], ds.features.cols,
                &out.features.data[i * out.features.cols]);
  }
  return out;
}

namespace {

double parse_real(const std::string& cell, std::size_t row, std::size_t col) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw DataError("load_csv: row " + std::to_string(row + 1) + ", column " +
                    std::to_string(col + 1) + ": cannot parse '" + cell + "' as a real");
  }
  return value;
}

int parse_label(const std::string& cell, std::size_t row) {
  int value = 0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw DataError("load_csv: row " + std::to_string(row + 1) + ": label '" + cell +
                    "' is not an integer");
  }
  return value;
}

}  // namespace

CsvLoadResult load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_csv: cannot open " + path);

  CsvLoadResult out;
  std::vector<std::vector<double>> rows;
  std::vector<int> raw_labels;
  std::string line;
  std::size_t row = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      ++row;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.push_back("");
    if (cells.size() < 2) {
      throw DataError("load_csv: row " + std::to_string(row + 1) +
                      ": need at least one feature column and a label column");
    }
    if (width == 0) {
      width = cells.size();
    } else if (cells.size() != width) {
      throw DataError("load_csv: row " + std::to_string(row + 1) + ": expected " +
                      std::to_string(width) + " columns, found " +
                      std::to_string(cells.size()));
    }
    std::vector<double> feats(width - 1);
    for (std::size_t c = 0; c + 1 < width; ++c) feats[c] = parse_real(cells[c], row, c);
    raw_labels.push_back(parse_label(cells.back(), row));
    rows.push_back(std::move(feats));
    ++row;
  }
  if (rows.empty()) throw DataError("load_csv: no data rows in " + path);

  // Remap labels to 0..C-1 when they are not already contiguous from zero.
  std::map<int, int> remap;
  for (int l : raw_labels) remap.emplace(l, 0);
  int next = 0;
  bool contiguous = true;
  for (auto& [orig, mapped] : remap) {
    mapped = next++;
    if (orig != mapped) contiguous = false;
  }
  if (!contiguous) {
    std::string msg = "labels remapped to 0.." + std::to_string(next - 1) + ":";
    for (const auto& [orig, mapped] : remap) {
      msg += " " + std::to_string(orig) + "->" + std::to_string(mapped);
    }
    out.warnings.push_back(msg);
  }

  out.dataset.num_classes = next;
  out.dataset.features = Matrix(rows.size(), width - 1);
  out.dataset.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), &out.dataset.features.data[i * (width - 1)]);
    out.dataset.labels[i] = remap[raw_labels[i]];
  }
  ensure_finite(out.dataset.features, "load_csv");
  return out;
}

void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream outf(path);
  if (!outf) throw DataError("save_csv: cannot open " + path + " for writing");
  outf.precision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.features.cols; ++j) {
      outf << ds.features(i, j) << ',';
    }
    outf << ds.labels[i] << '\n';
  }
}

}  // namespace lrb
