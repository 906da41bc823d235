#include "fcl/data.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcl/rng.hpp"

namespace fcl {
namespace {

Dataset tiny_dataset(int num_classes = 4, int dim = 6, int n_per_class = 50,
                     double sep = 2.0, std::uint64_t seed = 1) {
  Rng rng(seed);
  return generate_synthetic(num_classes, dim, n_per_class, sep, rng);
}

std::vector<std::size_t> all_indices(const Partition& p) {
  std::vector<std::size_t> idx;
  for (const auto& c : p.clients) idx.insert(idx.end(), c.indices.begin(), c.indices.end());
  return idx;
}

void expect_disjoint_union(const Partition& p, std::size_t n) {
  std::vector<std::size_t> idx = all_indices(p);
  ASSERT_EQ(idx.size(), n);
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(idx[i], i);
}

double label_entropy(const std::vector<int>& labels, int num_classes) {
  std::vector<double> counts(num_classes, 0.0);
  for (int y : labels) counts[static_cast<std::size_t>(y)] += 1.0;
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) {
      const double q = c / labels.size();
      h -= q * std::log(q);
    }
  }
  return h;
}

double mean_client_label_entropy(const Dataset& ds, const Partition& p) {
  double acc = 0.0;
  int counted = 0;
  for (const auto& client : p.clients) {
    if (client.indices.empty()) continue;
    std::vector<int> labels;
    for (std::size_t i : client.indices) labels.push_back(ds.y[i]);
    acc += label_entropy(labels, ds.num_classes);
    ++counted;
  }
  return counted ? acc / counted : 0.0;
}

TEST(Synthetic, ShapesLabelsAndDeterminism) {
  const Dataset ds = tiny_dataset(3, 4, 10);
  EXPECT_EQ(ds.n(), 30u);
  EXPECT_EQ(ds.dim(), 4u);
  EXPECT_EQ(ds.num_classes, 3);
  for (int y : ds.y) {
    EXPECT_GE(y, 0);
    EXPECT_LT(y, 3);
  }
  const Dataset again = tiny_dataset(3, 4, 10);
  EXPECT_EQ(again.x, ds.x);
  EXPECT_EQ(again.y, ds.y);
}

TEST(Synthetic, RejectsDegenerateArguments) {
  Rng rng(2);
  EXPECT_THROW(generate_synthetic(0, 4, 10, 1.0, rng), std::invalid_argument);
  EXPECT_THROW(generate_synthetic(3, 1, 10, 1.0, rng), std::invalid_argument);
  EXPECT_THROW(generate_synthetic(3, 4, 0, 1.0, rng), std::invalid_argument);
  EXPECT_THROW(generate_synthetic(3, 4, 10, 0.0, rng), std::invalid_argument);
}

TEST(Synthetic, LargeSeparationMakesClassesNearestMeanSeparable) {
  Rng rng(3);
  const Dataset ds = generate_synthetic(5, 8, 40, 1e6, rng);
  Matrix means(5, 8);
  std::vector<double> counts(5, 0.0);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const std::size_t c = static_cast<std::size_t>(ds.y[i]);
    counts[c] += 1.0;
    for (std::size_t j = 0; j < 8; ++j) means(c, j) += ds.x(i, j);
  }
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t j = 0; j < 8; ++j) means(c, j) /= counts[c];
  int correct = 0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    double best = 1e300;
    int arg = -1;
    for (int c = 0; c < 5; ++c) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < 8; ++j) {
        const double d = ds.x(i, j) - means(c, j);
        d2 += d * d;
      }
      if (d2 < best) {
        best = d2;
        arg = c;
      }
    }
    correct += arg == ds.y[i];
  }
  EXPECT_EQ(correct, static_cast<int>(ds.n()));
}

TEST(Split, FractionsAndDisjointness) {
  const Dataset ds = tiny_dataset(4, 6, 25);
  const auto [train, test] = split_train_test(ds, 0.2, 9);
  EXPECT_EQ(test.n(), 20u);
  EXPECT_EQ(train.n(), 80u);
  EXPECT_EQ(train.num_classes, 4);
  const auto [train2, test2] = split_train_test(ds, 0.2, 9);
  EXPECT_EQ(train2.x, train.x);
  EXPECT_EQ(test2.y, test.y);
  EXPECT_THROW(split_train_test(ds, 1.0, 9), std::invalid_argument);
  EXPECT_THROW(split_train_test(ds, -0.1, 9), std::invalid_argument);
}

TEST(PartitionSpecValidation, RejectsBadFields) {
  PartitionSpec spec;
  spec.num_clients = 0;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec = PartitionSpec{};
  spec.alpha = 0.0;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec = PartitionSpec{};
  spec.num_rotation_bins = 0;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec = PartitionSpec{};
  spec.labelled_fraction = 1.5;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
}

TEST(LabelSkew, DisjointUnionAcrossSeedsAndAlphas) {
  const Dataset ds = tiny_dataset();
  for (double alpha : {0.1, 1.0, 100.0}) {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      PartitionSpec spec;
      spec.mode = PartitionMode::label_skew;
      spec.alpha = alpha;
      spec.num_clients = 7;
      const Partition p = partition_label_skew(ds, spec, seed);
      ASSERT_EQ(p.clients.size(), 7u);
      expect_disjoint_union(p, ds.n());
      // Class pools can run dry under heavy skew, so exact per-client quotas
      // are not guaranteed — but nobody ends up empty at this scale.
      for (const auto& c : p.clients) {
        EXPECT_FALSE(c.indices.empty());
      }
    }
  }
}

TEST(LabelSkew, FeaturesAreLeftUntouched) {
  const Dataset ds = tiny_dataset();
  PartitionSpec spec;
  spec.mode = PartitionMode::label_skew;
  spec.num_clients = 5;
  const Partition p = partition_label_skew(ds, spec, 4);
  EXPECT_EQ(p.data.x, ds.x);
  for (const auto& c : p.clients) EXPECT_TRUE(c.sample_bins.empty());
}

TEST(LabelSkew, HugeAlphaMatchesGlobalPrior) {
  // alpha -> infinity drives every client's Dirichlet class mix to the global
  // prior. The realized histogram keeps multinomial sampling noise on top, so
  // assert full class coverage and near-uniform label entropy rather than
  // exact per-class shares.
  const Dataset ds = tiny_dataset(10, 6, 100, 2.0, 5);  // 1000 samples
  PartitionSpec spec;
  spec.mode = PartitionMode::label_skew;
  spec.alpha = 1e6;
  spec.num_clients = 5;
  const Partition p = partition_label_skew(ds, spec, 6);
  for (const auto& client : p.clients) {
    std::vector<int> labels;
    for (std::size_t i : client.indices) labels.push_back(ds.y[i]);
    std::set<int> distinct(labels.begin(), labels.end());
    EXPECT_EQ(distinct.size(), 10u) << "client " << client.client_id;
    EXPECT_GT(label_entropy(labels, 10), 0.97 * std::log(10.0))
        << "client " << client.client_id;
  }
}

TEST(LabelSkew, SmallAlphaConcentratesLabels) {
  // alpha = 0.1 with 100 clients on 10 balanced classes: mean per-client
  // label entropy under half the uniform entropy, averaged over 5 seeds.
  const Dataset ds = tiny_dataset(10, 6, 200, 2.0, 7);  // 2000 samples
  PartitionSpec spec;
  spec.mode = PartitionMode::label_skew;
  spec.alpha = 0.1;
  spec.num_clients = 100;
  double acc = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    acc += mean_client_label_entropy(ds, partition_label_skew(ds, spec, seed));
  }
  EXPECT_LT(acc / 5.0, 0.5 * std::log(10.0));
}

TEST(LabelSkew, EntropyShrinksAsAlphaShrinks) {
  const Dataset ds = tiny_dataset(10, 6, 100, 2.0, 8);
  PartitionSpec spec;
  spec.mode = PartitionMode::label_skew;
  spec.num_clients = 20;
  auto mean_entropy = [&](double alpha) {
    spec.alpha = alpha;
    double acc = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      acc += mean_client_label_entropy(ds, partition_label_skew(ds, spec, seed));
    }
    return acc / 5.0;
  };
  const double h100 = mean_entropy(100.0);
  const double h1 = mean_entropy(1.0);
  const double h01 = mean_entropy(0.1);
  EXPECT_GE(h100, h1);
  EXPECT_GE(h1, h01);
}

TEST(Rotation, AngleZeroIsIdentityAndRotationsPreserveNorm) {
  Rng rng(10);
  Matrix x(4, 6);
  for (double& v : x.data()) v = rng.normal();
  Matrix same = x;
  for (std::size_t i = 0; i < 4; ++i) detail::rotate_row(same, i, 0.0);
  EXPECT_EQ(same, x);

  Matrix rot = x;
  for (std::size_t i = 0; i < 4; ++i) detail::rotate_row(rot, i, 0.77 + i);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(row_norm(rot, i), row_norm(x, i), 1e-12);
  }
  // Rotating back by the negated angle restores the row.
  for (std::size_t i = 0; i < 4; ++i) detail::rotate_row(rot, i, -(0.77 + i));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(rot.data()[i], x.data()[i], 1e-12);
}

TEST(CovariateShift, DisjointUnionNormPreservationAndBins) {
  const Dataset ds = tiny_dataset(4, 6, 60, 2.0, 11);
  PartitionSpec spec;
  spec.mode = PartitionMode::covariate_shift;
  spec.alpha = 0.5;
  spec.num_clients = 6;
  spec.num_rotation_bins = 10;
  const Partition p = partition_covariate_shift(ds, spec, 12);
  expect_disjoint_union(p, ds.n());
  for (const auto& client : p.clients) {
    ASSERT_EQ(client.sample_bins.size(), client.indices.size());
    for (std::size_t i = 0; i < client.indices.size(); ++i) {
      const std::size_t row = client.indices[i];
      EXPECT_NEAR(row_norm(p.data.x, row), row_norm(ds.x, row), 1e-12);
      EXPECT_GE(client.sample_bins[i], 0);
      EXPECT_LT(client.sample_bins[i], 10);
    }
    // rotation_bins is the sorted set of distinct bins actually used.
    std::set<int> seen(client.sample_bins.begin(), client.sample_bins.end());
    ASSERT_EQ(client.rotation_bins.size(), seen.size());
    EXPECT_TRUE(std::is_sorted(client.rotation_bins.begin(), client.rotation_bins.end()));
  }
}

TEST(CovariateShift, LabelsStayBalancedAcrossClients) {
  // The i.i.d. split does not skew labels: each client's class shares stay
  // close to the global prior.
  const Dataset ds = tiny_dataset(4, 6, 250, 2.0, 13);  // 1000 samples
  PartitionSpec spec;
  spec.mode = PartitionMode::covariate_shift;
  spec.alpha = 0.5;
  spec.num_clients = 4;
  const Partition p = partition_covariate_shift(ds, spec, 14);
  for (const auto& client : p.clients) {
    std::vector<double> counts(4, 0.0);
    for (std::size_t i : client.indices) counts[static_cast<std::size_t>(ds.y[i])] += 1.0;
    for (double c : counts) EXPECT_NEAR(c / client.indices.size(), 0.25, 0.1);
  }
}

TEST(CovariateShift, SmallAlphaConcentratesRotationBins) {
  const Dataset ds = tiny_dataset(4, 6, 125, 2.0, 15);  // 500 samples
  PartitionSpec spec;
  spec.mode = PartitionMode::covariate_shift;
  spec.num_clients = 5;
  spec.num_rotation_bins = 10;
  auto mean_distinct_bins = [&](double alpha) {
    spec.alpha = alpha;
    double acc = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const Partition p = partition_covariate_shift(ds, spec, seed);
      for (const auto& c : p.clients) acc += static_cast<double>(c.rotation_bins.size());
    }
    return acc / (5.0 * 5.0);
  };
  EXPECT_LT(mean_distinct_bins(0.1), mean_distinct_bins(100.0));
}

TEST(CovariateShift, OddFeatureDimIsRejected) {
  const Dataset ds = tiny_dataset(3, 5, 10, 2.0, 16);
  PartitionSpec spec;
  spec.mode = PartitionMode::covariate_shift;
  spec.num_clients = 2;
  EXPECT_THROW(partition_covariate_shift(ds, spec, 1), std::invalid_argument);
  spec.mode = PartitionMode::joint_shift;
  EXPECT_THROW(partition_joint_shift(ds, spec, 1), std::invalid_argument);
}

TEST(JointShift, LabelAssignmentMatchesLabelSkewAtEqualSeed) {
  const Dataset ds = tiny_dataset(5, 6, 60, 2.0, 17);
  PartitionSpec spec;
  spec.alpha = 0.3;
  spec.num_clients = 6;
  spec.mode = PartitionMode::label_skew;
  const Partition skew = partition_label_skew(ds, spec, 21);
  spec.mode = PartitionMode::joint_shift;
  const Partition joint = partition_joint_shift(ds, spec, 21);
  ASSERT_EQ(joint.clients.size(), skew.clients.size());
  for (std::size_t s = 0; s < skew.clients.size(); ++s) {
    EXPECT_EQ(joint.clients[s].indices, skew.clients[s].indices);
  }
  expect_disjoint_union(joint, ds.n());
  // And the joint variant actually rotated the stored features.
  EXPECT_NE(joint.data.x, ds.x);
  EXPECT_EQ(skew.data.x, ds.x);
}

TEST(PartitionDispatch, RoutesByModeAndNamesParse) {
  const Dataset ds = tiny_dataset(3, 6, 30, 2.0, 18);
  PartitionSpec spec;
  spec.num_clients = 3;
  for (PartitionMode m : {PartitionMode::label_skew, PartitionMode::covariate_shift,
                          PartitionMode::joint_shift}) {
    spec.mode = m;
    const Partition p = partition_dataset(ds, spec, 5);
    expect_disjoint_union(p, ds.n());
    EXPECT_EQ(parse_partition_mode(partition_mode_name(m)), m);
  }
  EXPECT_FALSE(parse_partition_mode("bogus").has_value());
}

TEST(LabelledMask, FractionIsFloorPerClient) {
  const Dataset ds = tiny_dataset(4, 6, 55, 2.0, 19);
  PartitionSpec spec;
  spec.mode = PartitionMode::label_skew;
  spec.num_clients = 7;
  spec.labelled_fraction = 0.4;
  const Partition p = partition_label_skew(ds, spec, 20);
  for (const auto& client : p.clients) {
    ASSERT_EQ(client.labelled_mask.size(), client.indices.size());
    std::size_t n_lab = 0;
    for (auto f : client.labelled_mask) n_lab += f;
    EXPECT_EQ(n_lab, static_cast<std::size_t>(0.4 * client.indices.size()));
  }
  // Full labelling marks every row.
  spec.labelled_fraction = 1.0;
  const Partition full = partition_label_skew(ds, spec, 20);
  for (const auto& client : full.clients) {
    for (auto f : client.labelled_mask) EXPECT_EQ(f, 1);
  }
}

TEST(Augment, IdentitySettingsReproduceTheInput) {
  Rng rng(22);
  Matrix x(5, 4);
  for (double& v : x.data()) v = rng.normal();
  AugmentSpec aug;
  aug.noise_sigma = 0.0;
  aug.mask_prob = 0.0;
  aug.scale_min = 1.0;
  aug.scale_max = 1.0;
  Rng view_rng(23);
  const auto [x1, x2] = make_views(x, aug, view_rng);
  EXPECT_EQ(x1, x);
  EXPECT_EQ(x2, x);
}

TEST(Augment, ViewsDifferAndStayFinite) {
  Rng rng(24);
  Matrix x(6, 4);
  for (double& v : x.data()) v = rng.normal();
  AugmentSpec aug;  // defaults: noise + masking + scaling
  Rng view_rng(25);
  const auto [x1, x2] = make_views(x, aug, view_rng);
  EXPECT_NE(x1, x2);
  EXPECT_TRUE(all_finite(x1));
  EXPECT_TRUE(all_finite(x2));
}

TEST(Augment, NoiseIsCenteredAtTheCleanPoint) {
  // With masking off and symmetric scaling around 1, E[view - x] = 0; the
  // Monte Carlo mean over many draws stays within a few standard errors.
  const Matrix x = Matrix::from_rows({{1.0, -2.0, 0.5, 3.0}});
  AugmentSpec aug;
  aug.noise_sigma = 0.5;
  aug.mask_prob = 0.0;
  aug.scale_min = 0.9;
  aug.scale_max = 1.1;
  Rng rng(26);
  const int trials = 20000;
  std::vector<double> acc(4, 0.0);
  for (int t = 0; t < trials; ++t) {
    const auto [x1, x2] = make_views(x, aug, rng);
    for (std::size_t j = 0; j < 4; ++j) acc[j] += (x1(0, j) - x(0, j)) + (x2(0, j) - x(0, j));
  }
  // Per-view deviation std is about sqrt(sigma^2 + Var(s) x^2) <= 0.6 here;
  // averaged over 2 * trials draws the tolerance below is > 5 standard errors.
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(acc[j] / (2.0 * trials), 0.0, 0.02) << "coord " << j;
  }
}

TEST(Augment, ValidationRejectsBadSettings) {
  Rng rng(27);
  const Matrix x(1, 2);
  AugmentSpec aug;
  aug.noise_sigma = -0.1;
  EXPECT_THROW(make_views(x, aug, rng), std::invalid_argument);
  aug = AugmentSpec{};
  aug.mask_prob = 1.0;
  EXPECT_THROW(make_views(x, aug, rng), std::invalid_argument);
  aug = AugmentSpec{};
  aug.scale_min = 0.0;
  EXPECT_THROW(make_views(x, aug, rng), std::invalid_argument);
  aug = AugmentSpec{};
  aug.scale_max = 0.5;  // below scale_min
  EXPECT_THROW(make_views(x, aug, rng), std::invalid_argument);
}

TEST(DatasetFile, RoundTripIsBitExact) {
  const Dataset ds = tiny_dataset(3, 4, 12, 2.0, 28);
  const std::string path = std::string(::testing::TempDir()) + "ds_roundtrip.bin";
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  EXPECT_EQ(back.x, ds.x);
  EXPECT_EQ(back.y, ds.y);
  EXPECT_EQ(back.num_classes, ds.num_classes);
  std::remove(path.c_str());
}

TEST(DatasetFile, BadMagicAndMissingFileThrow) {
  const std::string path = std::string(::testing::TempDir()) + "ds_bad.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os << "JUNKJUNKJUNKJUNK";
  }
  EXPECT_THROW(load_dataset(path), std::runtime_error);
  std::remove(path.c_str());
  EXPECT_THROW(load_dataset(path), std::runtime_error);
}

TEST(Manifest, FormatIsStable) {
  std::vector<ClientDataset> clients(2);
  clients[0].client_id = 0;
  clients[0].indices = {3, 1};
  clients[0].labelled_mask = {1, 0};
  clients[1].client_id = 1;
  clients[1].indices = {2};
  clients[1].labelled_mask = {1};
  clients[1].sample_bins = {4};
  std::ostringstream os;
  write_partition_manifest(os, clients);
  EXPECT_EQ(os.str(),
            "client_id,index,labelled_flag,bin_id\n"
            "0,3,1,-1\n"
            "0,1,0,-1\n"
            "1,2,1,4\n");
}

}  // namespace
}  // namespace fcl
