#include "fcl/config.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcl/experiment.hpp"

namespace fcl {
namespace {

TEST(ConfigParse, EmptyTextYieldsDocumentedDefaults) {
  const ExperimentConfig cfg = parse_config_text("");
  EXPECT_EQ(cfg.num_classes, 10);
  EXPECT_EQ(cfg.dim, 16);
  EXPECT_EQ(cfg.n_per_class, 200);
  EXPECT_DOUBLE_EQ(cfg.class_separation, 1.2);
  EXPECT_DOUBLE_EQ(cfg.test_fraction, 0.2);
  ASSERT_EQ(cfg.modes.size(), 1u);
  EXPECT_EQ(cfg.modes[0], PartitionMode::label_skew);
  ASSERT_EQ(cfg.alphas.size(), 1u);
  EXPECT_DOUBLE_EQ(cfg.alphas[0], 0.1);
  EXPECT_EQ(cfg.num_clients, 20);
  EXPECT_DOUBLE_EQ(cfg.labelled_fraction, 1.0);
  EXPECT_EQ(cfg.dims.input_dim, 16u);  // mirrors dataset.dim
  ASSERT_EQ(cfg.methods.size(), 1u);
  EXPECT_EQ(cfg.methods[0], Method::federated_simclr);
  EXPECT_EQ(cfg.fed.rounds, 100);
  EXPECT_EQ(cfg.eval_cadence, 50);
  EXPECT_EQ(cfg.lp_mode, LpMode::full_labels);
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));
}

TEST(ConfigParse, EveryKeyRoundTrips) {
  const std::string text = R"(
# full sweep over the supported keys
[dataset]
num_classes = 4
dim = 8
n_per_class = 50
class_separation = 2.5
test_fraction = 0.25
aug_noise_sigma = 0.4
aug_mask_prob = 0.3
aug_scale_min = 0.7
aug_scale_max = 1.4

[partition]
mode = covariate_shift, joint_shift
alpha = 0.5, 1, 100
num_clients = 6
num_rotation_bins = 8
labelled_fraction = 0.5

[model]
encoder_hidden = 32
z_dim = 16
proj_hidden = 24
proj_dim = 12
predictor_hidden = 20

[train]
rounds = 30
clients_per_round = 3
local_epochs = 2
batch_size = 64
local_lr = 0.05
server_lr = 0.002
adam_beta1 = 0.8
adam_beta2 = 0.99
adam_eps = 1e-7
uv_weight = 0.5
temperature = 0.3
debug_average_server = true
checkpoint_every = 10
method = local_simclr, simsiam_uv

[eval]
cadence = 5
lp_epochs = 15
lp_lr = 0.2
lp_mode = labelled_subset

[run]
seeds = 7, 8, 9
)";
  const ExperimentConfig cfg = parse_config_text(text);
  EXPECT_EQ(cfg.num_classes, 4);
  EXPECT_EQ(cfg.dim, 8);
  EXPECT_EQ(cfg.n_per_class, 50);
  EXPECT_DOUBLE_EQ(cfg.class_separation, 2.5);
  EXPECT_DOUBLE_EQ(cfg.test_fraction, 0.25);
  EXPECT_DOUBLE_EQ(cfg.aug.noise_sigma, 0.4);
  EXPECT_DOUBLE_EQ(cfg.aug.mask_prob, 0.3);
  EXPECT_DOUBLE_EQ(cfg.aug.scale_min, 0.7);
  EXPECT_DOUBLE_EQ(cfg.aug.scale_max, 1.4);
  EXPECT_EQ(cfg.modes,
            (std::vector<PartitionMode>{PartitionMode::covariate_shift,
                                        PartitionMode::joint_shift}));
  EXPECT_EQ(cfg.alphas, (std::vector<double>{0.5, 1.0, 100.0}));
  EXPECT_EQ(cfg.num_clients, 6);
  EXPECT_EQ(cfg.num_rotation_bins, 8);
  EXPECT_DOUBLE_EQ(cfg.labelled_fraction, 0.5);
  EXPECT_EQ(cfg.dims.input_dim, 8u);
  EXPECT_EQ(cfg.dims.encoder_hidden, 32u);
  EXPECT_EQ(cfg.dims.z_dim, 16u);
  EXPECT_EQ(cfg.dims.proj_hidden, 24u);
  EXPECT_EQ(cfg.dims.proj_dim, 12u);
  EXPECT_EQ(cfg.dims.predictor_hidden, 20u);
  EXPECT_EQ(cfg.fed.rounds, 30);
  EXPECT_EQ(cfg.fed.clients_per_round, 3);
  EXPECT_EQ(cfg.fed.local_epochs, 2);
  EXPECT_EQ(cfg.fed.batch_size, 64);
  EXPECT_DOUBLE_EQ(cfg.fed.local_lr, 0.05);
  EXPECT_DOUBLE_EQ(cfg.fed.server_lr, 0.002);
  EXPECT_DOUBLE_EQ(cfg.fed.adam_beta1, 0.8);
  EXPECT_DOUBLE_EQ(cfg.fed.adam_beta2, 0.99);
  EXPECT_DOUBLE_EQ(cfg.fed.adam_eps, 1e-7);
  EXPECT_DOUBLE_EQ(cfg.fed.uv_weight, 0.5);
  EXPECT_DOUBLE_EQ(cfg.fed.temperature, 0.3);
  EXPECT_TRUE(cfg.fed.debug_average_server);
  EXPECT_EQ(cfg.checkpoint_every, 10);
  EXPECT_EQ(cfg.methods, (std::vector<Method>{Method::local_simclr, Method::simsiam_uv}));
  EXPECT_EQ(cfg.eval_cadence, 5);
  EXPECT_EQ(cfg.lp_epochs, 15);
  EXPECT_DOUBLE_EQ(cfg.lp_lr, 0.2);
  EXPECT_EQ(cfg.lp_mode, LpMode::labelled_subset);
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{7, 8, 9}));
}

TEST(ConfigParse, RejectsUnknownKeysSectionsAndMalformedLines) {
  try {
    parse_config_text("[partition]\nalpa = 0.1\n");
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("partition.alpa"), std::string::npos);
  }
  EXPECT_THROW(parse_config_text("[nonsense]\n"), std::invalid_argument);
  EXPECT_THROW(parse_config_text("rounds = 3\n"), std::invalid_argument);  // outside section
  EXPECT_THROW(parse_config_text("[train\n"), std::invalid_argument);
  EXPECT_THROW(parse_config_text("[train]\nrounds\n"), std::invalid_argument);
  EXPECT_THROW(parse_config_text("[train]\nrounds = many\n"), std::invalid_argument);
  EXPECT_THROW(parse_config_text("[train]\nlocal_lr = 0.1x\n"), std::invalid_argument);
  EXPECT_THROW(parse_config_text("[train]\ndebug_average_server = maybe\n"),
               std::invalid_argument);
  EXPECT_THROW(parse_config_text("[train]\nmethod = simclr_deluxe\n"), std::invalid_argument);
  EXPECT_THROW(parse_config_text("[partition]\nmode = pathological\n"), std::invalid_argument);
  EXPECT_THROW(parse_config_text("[eval]\nlp_mode = some_labels\n"), std::invalid_argument);
}

TEST(ConfigParse, ValidationRunsOnTheParsedResult) {
  EXPECT_THROW(parse_config_text("[dataset]\ntest_fraction = 1.0\n"), std::invalid_argument);
  EXPECT_THROW(parse_config_text("[partition]\nalpha = -1\n"), std::invalid_argument);
  EXPECT_THROW(parse_config_text("[train]\nclients_per_round = 10000\n"),
               std::invalid_argument);
  EXPECT_THROW(parse_config_text("[dataset]\naug_mask_prob = 1.0\n"), std::invalid_argument);
}

TEST(ConfigParse, LoadConfigReadsFilesAndRejectsMissingOnes) {
  const std::string path = std::string(::testing::TempDir()) + "/probe_config.txt";
  {
    std::ofstream os(path);
    os << "[dataset]\nnum_classes = 3\ndim = 4\n";
  }
  const ExperimentConfig cfg = load_config(path);
  EXPECT_EQ(cfg.num_classes, 3);
  EXPECT_EQ(cfg.dims.input_dim, 4u);
  EXPECT_THROW(load_config(path + ".does_not_exist"), std::runtime_error);
}

TEST(ConfigParse, SeedOverrideReplacesTheListOnlyWhenSet) {
  ExperimentConfig cfg = parse_config_text("[run]\nseeds = 1, 2\n");
  unsetenv("FCL_SEED_OVERRIDE");
  apply_seed_override(cfg);
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{1, 2}));

  setenv("FCL_SEED_OVERRIDE", "41,42", 1);
  apply_seed_override(cfg);
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{41, 42}));

  setenv("FCL_SEED_OVERRIDE", "not_a_seed", 1);
  EXPECT_THROW(apply_seed_override(cfg), std::invalid_argument);
  unsetenv("FCL_SEED_OVERRIDE");
}

TEST(ExperimentGrid, ExpandsTheCartesianProductInOrder) {
  ExperimentConfig cfg = parse_config_text(
      "[partition]\nmode = label_skew, covariate_shift\nalpha = 0.1, 1\n"
      "[train]\nmethod = local_simclr, federated_simclr\n");
  const std::vector<GridPoint> grid = experiment_grid(cfg);
  ASSERT_EQ(grid.size(), 8u);
  EXPECT_EQ(grid[0].method, Method::local_simclr);
  EXPECT_EQ(grid[0].mode, PartitionMode::label_skew);
  EXPECT_DOUBLE_EQ(grid[0].alpha, 0.1);
  EXPECT_DOUBLE_EQ(grid[1].alpha, 1.0);  // alpha varies fastest
  EXPECT_EQ(grid[2].mode, PartitionMode::covariate_shift);
  EXPECT_EQ(grid[4].method, Method::federated_simclr);
  EXPECT_EQ(grid[7].method, Method::federated_simclr);
  EXPECT_EQ(grid[7].mode, PartitionMode::covariate_shift);
  EXPECT_DOUBLE_EQ(grid[7].alpha, 1.0);
}

TEST(ProbePoolTest, FullLabelsTakesEveryRowLabelledSubsetOnlyMaskedOnes) {
  Rng rng(5);
  const Dataset train = generate_synthetic(4, 6, 30, 1.5, rng);
  PartitionSpec spec;
  spec.mode = PartitionMode::label_skew;
  spec.alpha = 1.0;
  spec.num_clients = 4;
  spec.labelled_fraction = 0.5;
  const Partition part = partition_dataset(train, spec, 5);

  const ProbePool full = probe_pool(part, train, LpMode::full_labels);
  EXPECT_EQ(full.rows.size(), train.x.rows());
  for (std::size_t i = 0; i < full.rows.size(); ++i) {
    EXPECT_EQ(full.labels[i], train.y[full.rows[i]]);
  }

  std::size_t labelled = 0;
  for (const ClientDataset& c : part.clients) {
    for (std::uint8_t f : c.labelled_mask) labelled += f;
  }
  const ProbePool subset = probe_pool(part, train, LpMode::labelled_subset);
  EXPECT_EQ(subset.rows.size(), labelled);
  EXPECT_LT(subset.rows.size(), full.rows.size());
}

ExperimentConfig tiny_run_config() {
  return parse_config_text(R"(
[dataset]
num_classes = 3
dim = 6
n_per_class = 20
[partition]
num_clients = 2
[train]
rounds = 2
clients_per_round = 2
batch_size = 32
method = federated_simclr
[eval]
cadence = 1
lp_epochs = 3
[run]
seeds = 1
)");
}

TEST(RunSingle, RerunsProduceByteIdenticalMetrics) {
  const ExperimentConfig cfg = tiny_run_config();
  const GridPoint point = experiment_grid(cfg).at(0);
  const SeedOutcome a = run_single(cfg, point, 3);
  const SeedOutcome b = run_single(cfg, point, 3);
  EXPECT_EQ(a.metrics_csv, b.metrics_csv);
  EXPECT_DOUBLE_EQ(a.lp_test_acc, b.lp_test_acc);
  EXPECT_DOUBLE_EQ(a.lp_train_acc, b.lp_train_acc);

  // Different seeds give genuinely different trajectories.
  const SeedOutcome c = run_single(cfg, point, 4);
  EXPECT_NE(a.metrics_csv, c.metrics_csv);
}

TEST(RunSingle, EmitsHeaderedCsvAndInvokesTheRoundHook) {
  const ExperimentConfig cfg = tiny_run_config();
  const GridPoint point = experiment_grid(cfg).at(0);
  std::vector<int> rounds_seen;
  const SeedOutcome out = run_single(cfg, point, 1, [&](int round, const ModelParams& p) {
    rounds_seen.push_back(round);
    EXPECT_EQ(p.num_clients(), 2u);
  });
  EXPECT_EQ(rounds_seen, (std::vector<int>{1, 2}));
  EXPECT_EQ(out.metrics_csv.rfind(metrics_csv_header(), 0), 0u);  // header comes first
  // header + round 0 + 2 training rounds
  EXPECT_EQ(std::count(out.metrics_csv.begin(), out.metrics_csv.end(), '\n'), 4);
  EXPECT_GT(out.lp_test_acc, 0.0);
}

TEST(Summaries, MeanAndStandardErrorAreHandComputable) {
  GridPoint point;
  std::vector<SeedOutcome> outcomes(2);
  outcomes[0].lp_test_acc = 0.5;
  outcomes[0].lp_train_acc = 0.8;
  outcomes[1].lp_test_acc = 0.7;
  outcomes[1].lp_train_acc = 0.6;
  const GridSummary s = summarize(point, outcomes);
  EXPECT_EQ(s.num_seeds, 2);
  EXPECT_DOUBLE_EQ(s.test_mean, 0.6);
  // sample std = sqrt(2 * 0.1^2 / 1) = 0.1414..., stderr = that / sqrt(2) = 0.1
  EXPECT_NEAR(s.test_stderr, 0.1, 1e-12);
  EXPECT_DOUBLE_EQ(s.train_mean, 0.7);

  const GridSummary single = summarize(point, {outcomes[0]});
  EXPECT_DOUBLE_EQ(single.test_stderr, 0.0);

  const GridSummary empty = summarize(point, {});
  EXPECT_EQ(empty.num_seeds, 0);
  EXPECT_DOUBLE_EQ(empty.test_mean, 0.0);
}

TEST(Summaries, PooledStderrAddsInQuadrature) {
  GridSummary a, b;
  a.test_stderr = 0.03;
  b.test_stderr = 0.04;
  EXPECT_DOUBLE_EQ(pooled_stderr(a, b), 0.05);
}

TEST(Summaries, CsvFormatsAreStable) {
  EXPECT_STREQ(summary_csv_header(),
               "method,mode,alpha,seeds,lp_test_acc_mean,lp_test_acc_stderr,"
               "lp_train_acc_mean,lp_train_acc_stderr");
  GridSummary s;
  s.point.method = Method::local_simclr;
  s.point.mode = PartitionMode::covariate_shift;
  s.point.alpha = 100.0;
  s.num_seeds = 5;
  s.test_mean = 0.625;
  s.test_stderr = 0.015625;
  s.train_mean = 0.75;
  s.train_stderr = 0.0;
  EXPECT_EQ(summary_csv_row(s),
            "local_simclr,covariate_shift,100,5,0.625,0.015625,0.75,0");
  EXPECT_EQ(format_alpha(0.1), "0.1");
  EXPECT_STREQ(lp_mode_name(LpMode::labelled_subset), "labelled_subset");
}

}  // namespace
}  // namespace fcl
