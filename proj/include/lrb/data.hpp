#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lrb/matrix.hpp"
#include "lrb/rng.hpp"

namespace lrb {

struct Dataset {
  Matrix features;          // N x d
  std::vector<int> labels;  // N, each in [0, num_classes)
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
};

using IndexList = std::vector<std::size_t>;

/// Gaussian blobs: one class mean per label drawn on the unit sphere, samples
/// scattered around it with the given spread. Labels are balanced.
Dataset synth_clusters(int num_classes, std::size_t dim, std::size_t per_class, double spread,
                       RngStream& rng);

/// Each client holds `labels_per_client` uniformly chosen labels; samples of
/// each label are dealt round-robin among the clients holding it. Shards are
/// disjoint; labels nobody holds are dropped.
std::vector<IndexList> label_shard_partition(const Dataset& ds, std::size_t num_clients,
                                             int labels_per_client, RngStream& rng);

/// Per-client class proportions drawn from a symmetric Dirichlet(alpha); each
/// sample picks its client from the per-class probability column. Retries a
/// bounded number of times if a shard comes out empty.
std::vector<IndexList> dirichlet_partition(const Dataset& ds, std::size_t num_clients,
                                           double alpha, RngStream& rng);

struct SplitResult {
  IndexList train;
  IndexList test;
};

/// Stratified-by-label train/test split; the subsample fraction applies to
/// the train side only.
SplitResult split_and_subsample(const Dataset& ds, const IndexList& shard,
                                double train_fraction, double subsample_fraction,
                                RngStream& rng);

Dataset gather(const Dataset& ds, const IndexList& indices);

struct CsvLoadResult {
  Dataset dataset;
  std::vector<std::string> warnings;
};

/// CSV with d real feature columns and one trailing integer label column, no
/// header. Non-contiguous labels are remapped (with a warning record).
CsvLoadResult load_csv(const std::string& path);
void save_csv(const Dataset& ds, const std::string& path);

/// Gamma(shape, 1) variate; used by the Dirichlet partitioner.
double gamma_draw(double shape, RngStream& rng);

}  // namespace lrb
