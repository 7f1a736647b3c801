#include "regtr/checkpoint.hpp"
#include "regtr/config.hpp"
#include "regtr/error.hpp"
#include "regtr/synth.hpp"
#include "regtr/model.hpp"
#include "regtr/train.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

namespace regtr {
namespace {

namespace fs = std::filesystem;

ModelConfig tiny_config() {
  ModelConfig c;
  c.d = 12;
  c.heads = 2;
  c.layers = 1;
  c.ffn_hidden = 16;
  c.feature_dim = 8;
  c.backbone_hidden = 8;
  return c;
}

std::vector<TrainPair> tiny_pairs(std::size_t n) {
  std::vector<TrainPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    synth::Rng rng(100 + i);
    synth::PairOptions o;
    o.resample_count = 300;
    const PointCloud shape = synth::generate_shape(i % 2 ? synth::ShapeKind::kBox : synth::ShapeKind::kSphereCap, 512, rng);
    out.push_back({synth::make_modelnet_style_pair(shape, 0.7, rng, o), 100 + i});
  }
  return out;
}

TEST(AdamW, FirstStepMovesByLearningRateTimesSign) {
  const auto p = ad::Tensor<double>::from(1, 3, {1.0, -2.0, 0.5}, true);
  p.zero_grad();
  auto g = p.mutable_grad();
  g[0] = 0.3;
  g[1] = -4.0;
  g[2] = 0.0;
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.1;
  AdamWState state;
  adamw_step(NamedTensors<double>{{"p", p}}, state, cfg, cfg.lr);
  EXPECT_EQ(state.step, 1u);
  // m_hat = g and v_hat = g^2, so the step is lr * (sign(g) + wd * p).
  EXPECT_NEAR(p.values()[0], 1.0 - 0.01 * (0.3 / (0.3 + 1e-8) + 0.1 * 1.0), 1e-12);
  EXPECT_NEAR(p.values()[1], -2.0 - 0.01 * (-1.0 + 0.1 * -2.0), 1e-9);
  EXPECT_NEAR(p.values()[2], 0.5 - 0.01 * 0.1 * 0.5, 1e-12);
}

TEST(AdamW, ClosedFormSpecialCases) {
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.0;
  const auto p = ad::Tensor<double>::from(1, 1, {1.0}, true);
  p.zero_grad();
  AdamWState s0;
  adamw_step(NamedTensors<double>{{"p", p}}, s0, cfg, cfg.lr);
  EXPECT_EQ(p.values()[0], 1.0);
  p.mutable_grad()[0] = 1.0;
  AdamWState s1;
  adamw_step(NamedTensors<double>{{"p", p}}, s1, cfg, cfg.lr);
  EXPECT_NEAR(p.values()[0], 1.0 - 0.01 / (1.0 + 1e-8), 1e-12);
  cfg.weight_decay = 0.5;
  p.mutable_values()[0] = 2.0;
  p.zero_grad();
  AdamWState s2;
  adamw_step(NamedTensors<double>{{"p", p}}, s2, cfg, cfg.lr);
  EXPECT_NEAR(p.values()[0], 2.0 * (1 - 0.01 * 0.5), 1e-15);
}

TEST(AdamW, SecondStepUsesBiasCorrectedMoments) {
  const auto p = ad::Tensor<double>::from(1, 1, {0.0}, true);
  TrainConfig cfg;
  cfg.lr = 1.0;
  cfg.weight_decay = 0.0;
  AdamWState state;
  const NamedTensors<double> named{{"p", p}};
  p.zero_grad();
  p.mutable_grad()[0] = 1.0;
  adamw_step(named, state, cfg, 1.0);
  p.mutable_grad()[0] = 3.0;
  const double before = p.values()[0];
  adamw_step(named, state, cfg, 1.0);
  const double m = 0.9 * 0.1 * 1.0 + 0.1 * 3.0, v = 0.999 * 0.001 + 0.001 * 9.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(before - p.values()[0], mh / (std::sqrt(vh) + 1e-8), 1e-9);
}

TEST(AdamW, RejectsNonFiniteGradientByName) {
  const auto p = ad::Tensor<double>::from(1, 2, {1.0, 2.0}, true);
  p.zero_grad();
  p.mutable_grad()[1] = std::nan("");
  AdamWState state;
  try {
    adamw_step(NamedTensors<double>{{"layer0.ffn1.w", p}}, state, TrainConfig{}, 1e-3);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("layer0.ffn1.w"), std::string::npos);
  }
}

TEST(Clipping, ScalesToMaxNormAndNeverIncreases) {
  const auto a = ad::Tensor<double>::from(1, 2, {0, 0}, true), b = ad::Tensor<double>::from(1, 1, {0}, true);
  a.zero_grad();
  b.zero_grad();
  a.mutable_grad()[0] = 3;
  a.mutable_grad()[1] = 0;
  b.mutable_grad()[0] = 4;
  const NamedTensors<double> named{{"a", a}, {"b", b}};
  EXPECT_DOUBLE_EQ(clip_gradients(named, 0.1), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.06, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.08, 1e-15);
  // Below the threshold nothing changes.
  EXPECT_NEAR(clip_gradients(named, 1.0), 0.1, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.08, 1e-15);
}

TEST(Clipping, RandomGradientsEndAtMostMaxNorm) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = ad::Tensor<double>::from(3, 4, std::vector<double>(12, 0.0), true);
    a.zero_grad();
    const double scale = std::exp(n(rng) * 3);
    for (double& g : a.mutable_grad()) g = scale * n(rng);
    const NamedTensors<double> named{{"a", a}};
    const double before = clip_gradients(named, 0.1);
    double after = 0;
    for (const double g : a.grad()) after += g * g;
    after = std::sqrt(after);
    EXPECT_LE(after, 0.1 + 1e-9);
    EXPECT_LE(after, before + 1e-12);
  }
}

TEST(Schedule, HalvesEveryPeriod) {
  TrainConfig cfg;
  cfg.lr = 1e-4;
  cfg.lr_halving_period = 20;
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 0), 1e-4);
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 19), 1e-4);
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 20), 5e-5);
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 45), 2.5e-5);
  cfg.lr_halving_period = 0;
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 1000), 1e-4);
}

TEST(Config, ParsesKeysCommentsAndRejectsUnknown) {
  const RunConfig cfg = parse_config("# comment\nd = 64 # trailing\nheads=4\nlayers = 3\nlr = 2e-4\n"
                                     "decoder = weighted\nloss_ablation = no-feat\nresample_pose = true\n");
  EXPECT_EQ(cfg.model.d, 64u);
  EXPECT_EQ(cfg.model.heads, 4u);
  EXPECT_EQ(cfg.model.layers, 3u);
  EXPECT_DOUBLE_EQ(cfg.train.lr, 2e-4);
  EXPECT_EQ(cfg.model.decoder, DecoderKind::kWeighted);
  EXPECT_EQ(cfg.model.loss_ablation, LossAblation::kNoFeat);
  EXPECT_TRUE(cfg.train.resample_pose);
  try {
    parse_config("d = 64\nbogus = 1\n");
    FAIL() << "expected InvalidArgument";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_config("d = abc\n"), InvalidArgument);
  EXPECT_THROW(parse_config("d = 10\nheads = 4\n"), InvalidArgument);
  EXPECT_THROW(parse_config("lr = 0\n"), InvalidArgument);
  EXPECT_THROW(parse_config("grad_clip = -1\n"), InvalidArgument);
  EXPECT_THROW(parse_config("no equals sign\n"), InvalidArgument);
}

TEST(Config, DefaultsFollowTheReferenceSettings) {
  const RunConfig cfg;
  EXPECT_EQ(cfg.model.d, 256u);
  EXPECT_EQ(cfg.model.heads, 8u);
  EXPECT_EQ(cfg.model.layers, 6u);
  EXPECT_EQ(cfg.model.ffn_hidden, 1024u);
  EXPECT_DOUBLE_EQ(cfg.model.lambda_o, 1.0);
  EXPECT_DOUBLE_EQ(cfg.model.lambda_f, 0.1);
  EXPECT_DOUBLE_EQ(cfg.train.lr, 1e-4);
  EXPECT_DOUBLE_EQ(cfg.train.weight_decay, 1e-4);
  EXPECT_DOUBLE_EQ(cfg.train.grad_clip, 0.1);
  EXPECT_DOUBLE_EQ(cfg.model.effective_overlap_radius(), 1.5 * cfg.model.voxel_size);
  EXPECT_DOUBLE_EQ(cfg.model.effective_feature_margin(), cfg.model.final_voxel_size());
}

TEST(Config, ModelTextRoundTrips) {
  ModelConfig m = tiny_config();
  m.decoder = DecoderKind::kWeighted;
  m.pos_scale = 2.5;
  m.lambda_f = 0.123456789;
  const ModelConfig r = parse_model_config_text(model_config_text(m));
  EXPECT_EQ(model_config_text(r), model_config_text(m));
  EXPECT_EQ(r.decoder, DecoderKind::kWeighted);
  EXPECT_DOUBLE_EQ(r.lambda_f, 0.123456789);
}

TEST(Config, ResolveThreads) {
  EXPECT_EQ(resolve_threads(4, true), 1u);
  EXPECT_EQ(resolve_threads(3, false), 3u);
  EXPECT_GE(resolve_threads(0, false), 1u);
}

TEST(Checkpoint, RoundTripAndValidation) {
  const fs::path dir = fs::temp_directory_path() / "regtr_test_ckpt";
  fs::create_directories(dir);
  const ModelConfig cfg = tiny_config();
  const ModelParams<float> p = init_params<float>(cfg, 5);
  save_checkpoint(dir / "a.ckpt", cfg, p);
  const Checkpoint c = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(model_config_text(c.config), model_config_text(cfg));
  std::vector<float> va, vb;
  p.for_each([&](const std::string&, const ad::Tensor<float>& t) { va.insert(va.end(), t.values().begin(), t.values().end()); });
  c.params.for_each([&](const std::string&, const ad::Tensor<float>& t) { vb.insert(vb.end(), t.values().begin(), t.values().end()); });
  EXPECT_EQ(va, vb);

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
  // Truncation is detected.
  const auto size = fs::file_size(dir / "a.ckpt");
  fs::copy_file(dir / "a.ckpt", dir / "t.ckpt", fs::copy_options::overwrite_existing);
  fs::resize_file(dir / "t.ckpt", size - 7);
  EXPECT_THROW(load_checkpoint(dir / "t.ckpt"), IoError);
  fs::remove_all(dir);
}

TEST(Train, ToySetLossHalvesWithinFiftyEpochs) {
  // Noise-free full-overlap pairs with a radius above the point spacing, so
  // every term has a reachable low value.
  std::vector<TrainPair> pairs;
  for (std::uint64_t i = 0; i < 8; ++i) {
    synth::Rng rng(500 + i);
    synth::PairOptions o;
    o.noise_sigma = 0.0;
    o.resample_count = 300;
    const auto kind = i % 2 ? synth::ShapeKind::kBox : synth::ShapeKind::kSphereCap;
    pairs.push_back({synth::make_modelnet_style_pair(synth::generate_shape(kind, 1024, rng), 1.0, rng, o), 500 + i});
  }
  ModelConfig mcfg;
  mcfg.d = 32;
  mcfg.heads = 4;
  mcfg.layers = 1;
  mcfg.ffn_hidden = 64;
  mcfg.feature_dim = 32;
  mcfg.backbone_hidden = 16;
  mcfg.pos_scale = 10.0;
  mcfg.overlap_radius = 0.2;
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.epochs = 50;
  cfg.lr_halving_period = 0;
  cfg.deterministic = true;
  const TrainResult r = train(pairs, mcfg, cfg);
  ASSERT_EQ(r.curve.size(), 50u);
  EXPECT_EQ(r.curve[0].epoch, 1u);
  for (const auto& s : r.curve) ASSERT_TRUE(std::isfinite(s.loss_total));
  EXPECT_LT(r.curve.back().loss_total, 0.5 * r.curve.front().loss_total);
}

TEST(Train, SeededRunsAreIdentical) {
  const auto pairs = tiny_pairs(4);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.deterministic = true;
  const TrainResult a = train(pairs, tiny_config(), cfg);
  const TrainResult b = train(pairs, tiny_config(), cfg);
  for (std::size_t e = 0; e < a.curve.size(); ++e) EXPECT_EQ(a.curve[e].loss_total, b.curve[e].loss_total);
  std::vector<float> va, vb;
  a.params.for_each([&](const std::string&, const ad::Tensor<float>& t) { va.insert(va.end(), t.values().begin(), t.values().end()); });
  b.params.for_each([&](const std::string&, const ad::Tensor<float>& t) { vb.insert(vb.end(), t.values().begin(), t.values().end()); });
  EXPECT_EQ(va, vb);
}

TEST(Train, OneEpochCheckpointReproducesForwardBitForBit) {
  const auto pairs = tiny_pairs(2);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.deterministic = true;
  const ModelConfig mcfg = tiny_config();
  const TrainResult r = train(pairs, mcfg, cfg);
  EXPECT_EQ(r.curve.size(), 1u);
  const fs::path p = fs::temp_directory_path() / "regtr_test_one_epoch.ckpt";
  save_checkpoint(p, mcfg, r.params);
  const Checkpoint c = load_checkpoint(p);
  const RegisterResult a = register_pair(pairs[0].pair.source, pairs[0].pair.target, mcfg, r.params, {});
  const RegisterResult b = register_pair(pairs[0].pair.source, pairs[0].pair.target, c.config, c.params, {});
  EXPECT_EQ(a.transform.matrix(), b.transform.matrix());
  fs::remove(p);
}

TEST(Train, ThreadedBatchesMatchSequentialClosely) {
  const auto pairs = tiny_pairs(4);
  const ModelConfig mcfg = tiny_config();
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.threads = 1;
  const TrainResult a = train(pairs, mcfg, cfg);
  cfg.threads = 4;
  const TrainResult b = train(pairs, mcfg, cfg);
  for (std::size_t e = 0; e < a.curve.size(); ++e) {
    EXPECT_NEAR(a.curve[e].loss_total, b.curve[e].loss_total, 1e-4 * std::abs(a.curve[e].loss_total));
  }
}

TEST(Train, LossCurveCsv) {
  const fs::path p = fs::temp_directory_path() / "regtr_test_curve.csv";
  write_loss_curve(p, {{1, 2.5, 1, 1, 5, 1e-4}, {2, 2.0, 0.8, 0.9, 3, 1e-4}});
  std::ifstream in(p);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "epoch,loss_total,loss_c,loss_o,loss_f,lr");
  EXPECT_EQ(row.substr(0, 6), "1,2.5,");
  fs::remove(p);
}

TEST(Train, RejectsEmptyDataset) {
  EXPECT_THROW(train({}, tiny_config(), TrainConfig{}), InvalidArgument);
}

}  // namespace
}  // namespace regtr
