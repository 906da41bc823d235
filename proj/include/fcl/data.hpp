// Synthetic multi-class data, the three client partitioning schemes
// (label skew, covariate shift, joint shift), view-pair augmentation, and a
// bit-exact binary dataset format plus a text partition manifest.
//
// All partition randomness is drawn from substreams derived from (seed, tag),
// with separate tags for label assignment, i.i.d. splitting, bin selection,
// rotation angles and labelled-subset choice. Because the streams are
// independent, the joint-shift partition assigns exactly the same indices as
// the label-skew partition at an equal seed — the rotation machinery never
// perturbs the label stream.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fcl/matrix.hpp"
#include "fcl/rng.hpp"
#include "fcl/serialize.hpp"

namespace fcl {

struct Dataset {
  Matrix x;                // N x D features
  std::vector<int> y;      // class IDs in [0, num_classes)
  int num_classes = 0;

  std::size_t n() const { return x.rows(); }
  std::size_t dim() const { return x.cols(); }
};

struct ClientDataset {
  int client_id = 0;
  std::vector<std::size_t> indices;        // into the parent dataset
  std::vector<int> rotation_bins;          // distinct bins used (sorted); empty if none
  std::vector<int> sample_bins;            // per-sample bin, aligned with indices; empty if none
  std::vector<std::uint8_t> labelled_mask; // per-sample, aligned with indices
};

enum class PartitionMode { label_skew, covariate_shift, joint_shift };

inline const char* partition_mode_name(PartitionMode m) {
  switch (m) {
    case PartitionMode::label_skew: return "label_skew";
    case PartitionMode::covariate_shift: return "covariate_shift";
    case PartitionMode::joint_shift: return "joint_shift";
  }
  return "?";
}

inline std::optional<PartitionMode> parse_partition_mode(std::string_view s) {
  for (PartitionMode m : {PartitionMode::label_skew, PartitionMode::covariate_shift,
                          PartitionMode::joint_shift}) {
    if (s == partition_mode_name(m)) return m;
  }
  return std::nullopt;
}

struct PartitionSpec {
  PartitionMode mode = PartitionMode::label_skew;
  double alpha = 0.1;              // Dirichlet concentration before prior multiplication
  int num_clients = 1;
  int num_rotation_bins = 10;
  double labelled_fraction = 1.0;  // per-client fraction of labelled samples

  void validate() const {
    if (alpha <= 0.0) throw std::invalid_argument("partition: alpha must be > 0");
    if (num_clients < 1) throw std::invalid_argument("partition: num_clients must be >= 1");
    if (num_rotation_bins < 1) throw std::invalid_argument("partition: num_rotation_bins must be >= 1");
    if (labelled_fraction < 0.0 || labelled_fraction > 1.0) {
      throw std::invalid_argument("partition: labelled_fraction must be in [0, 1]");
    }
  }
};

// A partition plus the feature matrix the clients actually train on (equal to
// the source features for label skew; a rotated copy for the shift modes).
struct Partition {
  std::vector<ClientDataset> clients;
  Dataset data;
};

// --- synthetic data -----------------------------------------------------------

// Gaussian blobs around unit-norm class means scaled by `class_separation`.
// Means are redrawn until every pairwise angle clears a floor; failure after
// a bounded number of attempts reports that the configuration is too crowded.
inline Dataset generate_synthetic(int num_classes, int dim, int n_per_class,
                                  double class_separation, Rng& rng) {
  if (num_classes < 1) throw std::invalid_argument("synthetic: num_classes must be >= 1");
  if (dim < 2) throw std::invalid_argument("synthetic: dim must be >= 2");
  if (n_per_class < 1) throw std::invalid_argument("synthetic: n_per_class must be >= 1");
  if (class_separation <= 0.0) throw std::invalid_argument("synthetic: class_separation must be > 0");

  constexpr double kMinAngle = 0.35;  // radians; loose for dim >= 2
  constexpr int kMaxAttempts = 10000;

  Matrix means(num_classes, dim);
  auto draw_unit_row = [&](std::size_t r) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (int j = 0; j < dim; ++j) {
        means(r, j) = rng.normal();
        norm2 += means(r, j) * means(r, j);
      }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (int j = 0; j < dim; ++j) means(r, j) *= inv;
  };
  int attempts = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (;;) {
      if (++attempts > kMaxAttempts) {
        throw std::runtime_error(
            "synthetic: could not separate class means; raise dim or lower num_classes");
      }
      draw_unit_row(static_cast<std::size_t>(c));
      bool ok = true;
      for (int p = 0; p < c && ok; ++p) {
        const double cosang = dot(means.row_ptr(c), means.row_ptr(p), dim);
        if (std::acos(std::clamp(cosang, -1.0, 1.0)) < kMinAngle) ok = false;
      }
      if (ok) break;
    }
  }

  Dataset ds;
  ds.num_classes = num_classes;
  ds.x = Matrix(static_cast<std::size_t>(num_classes) * n_per_class, dim);
  ds.y.resize(ds.x.rows());
  std::size_t r = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (int i = 0; i < n_per_class; ++i, ++r) {
      ds.y[r] = c;
      for (int j = 0; j < dim; ++j) {
        ds.x(r, j) = class_separation * means(c, j) + rng.normal();
      }
    }
  }
  return ds;
}

// Seeded shuffle split; the test set stays in source order within its slice.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, double test_fraction,
                                                    std::uint64_t seed) {
  if (test_fraction < 0.0 || test_fraction >= 1.0) {
    throw std::invalid_argument("split: test_fraction must be in [0, 1)");
  }
  std::vector<std::size_t> order(ds.n());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::derive(seed, "split");
  rng.shuffle(order);
  const std::size_t n_test = static_cast<std::size_t>(test_fraction * ds.n());
  auto take = [&](std::size_t begin, std::size_t end) {
    Dataset out;
    out.num_classes = ds.num_classes;
    std::vector<std::size_t> idx(order.begin() + begin, order.begin() + end);
    out.x = ds.x.gather_rows(idx);
    out.y.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out.y[i] = ds.y[idx[i]];
    return out;
  };
  return {take(n_test, ds.n()), take(0, n_test)};
}

// --- partitioners ---------------------------------------------------------------

namespace detail {

inline std::vector<double> empirical_label_prior(const Dataset& ds) {
  std::vector<double> prior(ds.num_classes, 0.0);
  for (int y : ds.y) prior[static_cast<std::size_t>(y)] += 1.0;
  for (double& p : prior) p /= static_cast<double>(ds.n());
  return prior;
}

// Greedy Dirichlet fill: per client draw class proportions q ~ Dir(alpha *
// prior), realize them as a multinomial over the client's quota, truncate each
// class count to what remains in its pool, and hand out any leftover samples
// round-robin at the end, so the result is an exact partition.
inline std::vector<std::vector<std::size_t>> dirichlet_class_fill(
    const Dataset& ds, const PartitionSpec& spec, std::uint64_t seed) {
  const int S = spec.num_clients;
  const int C = ds.num_classes;
  std::vector<std::vector<std::size_t>> pools(C);
  for (std::size_t i = 0; i < ds.n(); ++i) pools[static_cast<std::size_t>(ds.y[i])].push_back(i);
  {
    Rng pool_rng = Rng::derive(seed, "partition/labels/pools");
    for (auto& pool : pools) pool_rng.shuffle(pool);
  }
  const std::vector<double> prior = empirical_label_prior(ds);
  std::vector<double> conc(prior.size());
  for (std::size_t c = 0; c < prior.size(); ++c) conc[c] = spec.alpha * prior[c];

  std::vector<std::vector<std::size_t>> assigned(S);
  const std::size_t base = ds.n() / static_cast<std::size_t>(S);
  const std::size_t extra = ds.n() % static_cast<std::size_t>(S);
  for (int s = 0; s < S; ++s) {
    Rng rng = Rng::derive(seed, "partition/labels/client", {static_cast<std::uint64_t>(s)});
    const std::vector<double> q = rng.dirichlet(conc);
    const std::size_t quota = base + (static_cast<std::size_t>(s) < extra ? 1 : 0);
    std::vector<std::size_t> counts(q.size(), 0);
    for (std::size_t i = 0; i < quota; ++i) ++counts[rng.categorical(q)];
    for (std::size_t c = 0; c < counts.size(); ++c) {
      const std::size_t take = std::min(counts[c], pools[c].size());
      for (std::size_t i = 0; i < take; ++i) {
        assigned[s].push_back(pools[c].back());
        pools[c].pop_back();
      }
    }
  }
  std::vector<std::size_t> leftovers;
  for (auto& pool : pools) leftovers.insert(leftovers.end(), pool.begin(), pool.end());
  for (std::size_t i = 0; i < leftovers.size(); ++i) {
    assigned[i % static_cast<std::size_t>(S)].push_back(leftovers[i]);
  }
  return assigned;
}

// Even i.i.d. split by a single seeded global shuffle.
inline std::vector<std::vector<std::size_t>> iid_fill(const Dataset& ds,
                                                      const PartitionSpec& spec,
                                                      std::uint64_t seed) {
  std::vector<std::size_t> order(ds.n());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::derive(seed, "partition/iid");
  rng.shuffle(order);
  const int S = spec.num_clients;
  std::vector<std::vector<std::size_t>> assigned(S);
  const std::size_t base = ds.n() / static_cast<std::size_t>(S);
  const std::size_t extra = ds.n() % static_cast<std::size_t>(S);
  std::size_t pos = 0;
  for (int s = 0; s < S; ++s) {
    const std::size_t quota = base + (static_cast<std::size_t>(s) < extra ? 1 : 0);
    assigned[s].assign(order.begin() + pos, order.begin() + pos + quota);
    pos += quota;
  }
  return assigned;
}

inline void rotate_row(Matrix& x, std::size_t row, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  for (std::size_t j = 0; j + 1 < x.cols(); j += 2) {
    const double a = x(row, j);
    const double b = x(row, j + 1);
    x(row, j) = c * a - s * b;
    x(row, j + 1) = s * a + c * b;
  }
}

// Per client: bin proportions ~ Dir(alpha * uniform prior over bins), then an
// i.i.d. bin per sample and an angle uniform within that bin, applied as
// 2x2 block rotations to the stored features. Mutates `x` in place.
inline void apply_rotation_shift(Matrix& x, std::vector<ClientDataset>& clients,
                                 const PartitionSpec& spec, std::uint64_t seed) {
  const int B = spec.num_rotation_bins;
  const double bin_width = 2.0 * M_PI / B;
  std::vector<double> conc(static_cast<std::size_t>(B), spec.alpha / B);
  for (auto& client : clients) {
    Rng bin_rng = Rng::derive(seed, "partition/bins", {static_cast<std::uint64_t>(client.client_id)});
    const std::vector<double> q = bin_rng.dirichlet(conc);
    Rng angle_rng =
        Rng::derive(seed, "partition/rotation", {static_cast<std::uint64_t>(client.client_id)});
    client.sample_bins.resize(client.indices.size());
    for (std::size_t i = 0; i < client.indices.size(); ++i) {
      const int bin = static_cast<int>(angle_rng.categorical(q));
      client.sample_bins[i] = bin;
      const double angle = angle_rng.uniform(bin * bin_width, (bin + 1) * bin_width);
      rotate_row(x, client.indices[i], angle);
    }
    client.rotation_bins = client.sample_bins;
    std::sort(client.rotation_bins.begin(), client.rotation_bins.end());
    client.rotation_bins.erase(
        std::unique(client.rotation_bins.begin(), client.rotation_bins.end()),
        client.rotation_bins.end());
  }
}

inline void apply_labelled_masks(std::vector<ClientDataset>& clients, double fraction,
                                 std::uint64_t seed) {
  for (auto& client : clients) {
    const std::size_t n = client.indices.size();
    client.labelled_mask.assign(n, 0);
    const std::size_t n_lab = static_cast<std::size_t>(fraction * n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = Rng::derive(seed, "partition/labelled", {static_cast<std::uint64_t>(client.client_id)});
    rng.shuffle(order);
    for (std::size_t i = 0; i < n_lab; ++i) client.labelled_mask[order[i]] = 1;
  }
}

inline std::vector<ClientDataset> wrap_assignment(std::vector<std::vector<std::size_t>> assigned) {
  std::vector<ClientDataset> clients(assigned.size());
  for (std::size_t s = 0; s < assigned.size(); ++s) {
    clients[s].client_id = static_cast<int>(s);
    clients[s].indices = std::move(assigned[s]);
  }
  return clients;
}

}  // namespace detail

inline Partition partition_label_skew(const Dataset& ds, const PartitionSpec& spec,
                                      std::uint64_t seed) {
  spec.validate();
  Partition p;
  p.clients = detail::wrap_assignment(detail::dirichlet_class_fill(ds, spec, seed));
  detail::apply_labelled_masks(p.clients, spec.labelled_fraction, seed);
  p.data = ds;
  return p;
}

inline Partition partition_covariate_shift(const Dataset& ds, const PartitionSpec& spec,
                                           std::uint64_t seed) {
  spec.validate();
  if (ds.dim() % 2 != 0) {
    throw std::invalid_argument("partition: covariate shift needs an even feature dim");
  }
  Partition p;
  p.clients = detail::wrap_assignment(detail::iid_fill(ds, spec, seed));
  detail::apply_labelled_masks(p.clients, spec.labelled_fraction, seed);
  p.data = ds;
  detail::apply_rotation_shift(p.data.x, p.clients, spec, seed);
  return p;
}

inline Partition partition_joint_shift(const Dataset& ds, const PartitionSpec& spec,
                                       std::uint64_t seed) {
  spec.validate();
  if (ds.dim() % 2 != 0) {
    throw std::invalid_argument("partition: joint shift needs an even feature dim");
  }
  Partition p;
  p.clients = detail::wrap_assignment(detail::dirichlet_class_fill(ds, spec, seed));
  detail::apply_labelled_masks(p.clients, spec.labelled_fraction, seed);
  p.data = ds;
  detail::apply_rotation_shift(p.data.x, p.clients, spec, seed);
  return p;
}

inline Partition partition_dataset(const Dataset& ds, const PartitionSpec& spec,
                                   std::uint64_t seed) {
  switch (spec.mode) {
    case PartitionMode::label_skew: return partition_label_skew(ds, spec, seed);
    case PartitionMode::covariate_shift: return partition_covariate_shift(ds, spec, seed);
    case PartitionMode::joint_shift: return partition_joint_shift(ds, spec, seed);
  }
  throw std::invalid_argument("partition: unknown mode");
}

// --- augmentation ----------------------------------------------------------------

struct AugmentSpec {
  double noise_sigma = 0.5;
  double mask_prob = 0.2;
  double scale_min = 0.8;
  double scale_max = 1.2;

  void validate() const {
    if (noise_sigma < 0.0) throw std::invalid_argument("augment: noise_sigma must be >= 0");
    if (mask_prob < 0.0 || mask_prob >= 1.0) {
      throw std::invalid_argument("augment: mask_prob must be in [0, 1)");
    }
    if (scale_min <= 0.0 || scale_max < scale_min) {
      throw std::invalid_argument("augment: need 0 < scale_min <= scale_max");
    }
  }
};

// Two independent stochastic views of each row: additive Gaussian noise, then
// coordinate zero-masking, then one global scale factor per row.
inline std::pair<Matrix, Matrix> make_views(const Matrix& batch_x, const AugmentSpec& aug,
                                            Rng& rng) {
  aug.validate();
  auto one_view = [&]() {
    Matrix v = batch_x;
    for (std::size_t i = 0; i < v.rows(); ++i) {
      for (std::size_t j = 0; j < v.cols(); ++j) {
        v(i, j) += aug.noise_sigma * rng.normal();
        if (aug.mask_prob > 0.0 && rng.uniform() < aug.mask_prob) v(i, j) = 0.0;
      }
      const double scale = rng.uniform(aug.scale_min, aug.scale_max);
      for (std::size_t j = 0; j < v.cols(); ++j) v(i, j) *= scale;
    }
    return v;
  };
  Matrix x1 = one_view();
  Matrix x2 = one_view();
  return {std::move(x1), std::move(x2)};
}

// --- file formats ------------------------------------------------------------------
//
// Dataset: "FCDS" | u32 version | u64 N | u64 D | u64 C | N*D f64 LE | N u32 labels.
// Manifest: text lines `client_id,index,labelled_flag,bin_id` (bin_id -1 if unused).

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_dataset: cannot open " + path);
  io::write_magic(os, "FCDS");
  io::write_u32(os, 1);
  io::write_u64(os, ds.n());
  io::write_u64(os, ds.dim());
  io::write_u64(os, static_cast<std::uint64_t>(ds.num_classes));
  for (double v : ds.x.data()) io::write_f64(os, v);
  for (int y : ds.y) io::write_u32(os, static_cast<std::uint32_t>(y));
  if (!os) throw std::runtime_error("save_dataset: write failed for " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_dataset: cannot open " + path);
  io::expect_magic(is, "FCDS", "load_dataset");
  const std::uint32_t version = io::read_u32(is);
  if (version != 1) throw std::runtime_error("load_dataset: unsupported version");
  const std::uint64_t n = io::read_u64(is);
  const std::uint64_t d = io::read_u64(is);
  const std::uint64_t c = io::read_u64(is);
  Dataset ds;
  ds.num_classes = static_cast<int>(c);
  ds.x = Matrix(n, d);
  for (double& v : ds.x.data()) v = io::read_f64(is);
  ds.y.resize(n);
  for (auto& y : ds.y) y = static_cast<int>(io::read_u32(is));
  return ds;
}

inline void write_partition_manifest(std::ostream& os, const std::vector<ClientDataset>& clients) {
  os << "client_id,index,labelled_flag,bin_id\n";
  for (const auto& client : clients) {
    for (std::size_t i = 0; i < client.indices.size(); ++i) {
      const int bin = client.sample_bins.empty() ? -1 : client.sample_bins[i];
      os << client.client_id << ',' << client.indices[i] << ','
         << int(client.labelled_mask.empty() ? 0 : client.labelled_mask[i]) << ',' << bin << '\n';
    }
  }
}

}  // namespace fcl
