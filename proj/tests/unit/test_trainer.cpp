#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "chartlab/negcap/negcap.hpp"
#include "chartlab/numerics/gradcheck.hpp"
#include "chartlab/trainer/trainer.hpp"
#include "chartlab/util/error.hpp"
#include "chartlab/util/rng.hpp"

using namespace chartlab;
using namespace chartlab::trainer;
namespace fs = std::filesystem;

namespace {

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Loop oracle: i2t over positives plus every negative row, t2i over positives.
double oracle_loss(const Tensor& img, const Tensor& pos, const Tensor* neg, double ls) {
  const double s = std::exp(ls);
  const std::size_t n = img.rows(), d = img.cols();
  auto dot = [&](const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double r = 0;
    for (std::size_t k = 0; k < d; ++k) r += a.at(i, k) * b.at(j, k);
    return r * s;
  };
  double i2t = 0, t2i = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row, col;
    for (std::size_t j = 0; j < n; ++j) {
      row.push_back(dot(img, i, pos, j));
      col.push_back(dot(img, j, pos, i));
    }
    if (neg) {
      for (std::size_t j = 0; j < neg->rows(); ++j) row.push_back(dot(img, i, *neg, j));
    }
    i2t += log_sum_exp(row) - dot(img, i, pos, i);
    t2i += log_sum_exp(col) - dot(img, i, pos, i);
  }
  return 0.5 * (i2t + t2i) / static_cast<double>(n);
}

Tensor random_unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::matrix(n, d);
  for (auto& v : t.data()) v = rng.normal();
  return num::l2_normalize_rows(t);
}

dualenc::EncoderConfig tiny_encoder() {
  dualenc::EncoderConfig c;
  c.embed_dim = 8;
  c.projection_dim = 8;
  c.layers = 1;
  c.heads = 2;
  c.mlp_ratio = 2;
  return c;
}

chartgen::Dataset tiny_dataset(int charts, int k) {
  chartgen::GeneratorConfig g;
  g.n_train = charts;
  auto ds = chartgen::generate_dataset(g, chartgen::Split::train);
  if (k > 0) {
    negcap::NegativeConfig nc;
    nc.k = k;
    negcap::add_negatives(ds, nc);
  }
  return ds;
}

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("chartlab-trainer-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(SymmetricInfonce, UniformLogitsGiveLogN) {
  for (std::size_t n : {2u, 5u, 64u}) {
    EXPECT_NEAR(symmetric_infonce(Tensor::matrix(n, n, 3.0)), std::log(static_cast<double>(n)), 1e-12);
  }
}

TEST(SymmetricInfonce, SaturatesOnStrongDiagonal) {
  Tensor l = Tensor::matrix(4, 4, 0.0);
  for (std::size_t i = 0; i < 4; ++i) l.at(i, i) = 50.0;
  const double loss = symmetric_infonce(l);
  EXPECT_GE(loss, 0.0);
  EXPECT_LT(loss, 1e-20);
  EXPECT_THROW(symmetric_infonce(Tensor::matrix(2, 3)), ContractError);
}

TEST(HardnegInfonce, MatchesLoopOracle) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 + rng.below(6), d = 3 + rng.below(6), k = rng.below(4);
    const Tensor img = random_unit_rows(n, d, mix_seed(seed, 1));
    const Tensor pos = random_unit_rows(n, d, mix_seed(seed, 2));
    const Tensor neg = random_unit_rows(std::max<std::size_t>(n * k, 1), d, mix_seed(seed, 3));
    const double ls = rng.uniform(-1.0, 4.6);
    const Tensor* np = k == 0 ? nullptr : &neg;
    EXPECT_NEAR(hardneg_infonce(img, pos, np, ls), oracle_loss(img, pos, np, ls), 1e-10) << "seed " << seed;
  }
}

TEST(HardnegInfonce, NoNegativesIsExactlySymmetric) {
  const Tensor img = random_unit_rows(6, 5, 1), pos = random_unit_rows(6, 5, 2);
  const double ls = 2.0;
  Tensor logits = Tensor::matrix(6, 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 5; ++k) s += img.at(i, k) * pos.at(j, k);
      logits.at(i, j) = s * std::exp(ls);
    }
  Tape t;
  const Var l = hardneg_infonce(t, t.constant(img), t.constant(pos), Var{}, t.constant(Tensor::matrix(1, 1, ls)));
  Tape u;
  const Var m = symmetric_infonce(u, u.scale_by(u.matmul_nt(u.constant(img), u.constant(pos)),
                                                u.exp(u.constant(Tensor::matrix(1, 1, ls)))));
  EXPECT_EQ(t.value(l).item(), u.value(m).item());
  EXPECT_NEAR(t.value(l).item(), symmetric_infonce(logits), 1e-12);
}

TEST(HardnegInfonce, CloserNegativeRaisesLoss) {
  const Tensor img = random_unit_rows(4, 6, 7), pos = random_unit_rows(4, 6, 8);
  Tensor neg = random_unit_rows(8, 6, 9);
  const double before = hardneg_infonce(img, pos, &neg, 2.0);
  for (std::size_t k = 0; k < 6; ++k) neg.at(0, k) = img.at(0, k);  // negative equals an image
  EXPECT_GT(hardneg_infonce(img, pos, &neg, 2.0), before);
  EXPECT_GT(hardneg_infonce(img, pos, &neg, 2.0), hardneg_infonce(img, pos, nullptr, 2.0));
}

TEST(HardnegInfonce, PermutationEquivariant) {
  const std::size_t n = 5, d = 4, k = 2;
  const Tensor img = random_unit_rows(n, d, 11), pos = random_unit_rows(n, d, 12), neg = random_unit_rows(n * k, d, 13);
  std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor pi = Tensor::matrix(n, d), pp = Tensor::matrix(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      pi.at(i, c) = img.at(perm[i], c);
      pp.at(i, c) = pos.at(perm[i], c);
    }
  // Negatives are pooled across the batch, so their order is free too.
  Tensor pn_rows = Tensor::matrix(n * k, d);
  for (std::size_t r = 0; r < n * k; ++r)
    for (std::size_t c = 0; c < d; ++c) pn_rows.at(r, c) = neg.at(n * k - 1 - r, c);
  EXPECT_NEAR(hardneg_infonce(img, pos, &neg, 1.5), hardneg_infonce(pi, pp, &pn_rows, 1.5), 1e-12);
}

TEST(HardnegInfonce, GradientsMatchFiniteDifferences) {
  num::ParamSet p;
  p["img"] = random_unit_rows(4, 5, 21);
  p["pos"] = random_unit_rows(4, 5, 22);
  p["neg"] = random_unit_rows(8, 5, 23);
  p["ls"] = Tensor::matrix(1, 1, 1.3);
  auto fn = [](Tape& t, const num::ParamSet& ps) {
    return hardneg_infonce(t, t.param(ps, "img"), t.param(ps, "pos"), t.param(ps, "neg"), t.param(ps, "ls"));
  };
  const auto r = num::finite_diff_report(fn, p, 1e-6);
  EXPECT_LT(r.max_relative_error, 1e-6) << r.worst_param;
  Tape t;
  const auto g = t.backward(fn(t, p));
  double neg_norm = 0;
  for (double v : g.at("neg").data()) neg_norm += std::abs(v);
  EXPECT_GT(neg_norm, 1e-3);
}

TEST(HardnegInfonce, RejectsBadShapes) {
  const Tensor a = random_unit_rows(3, 4, 1), b = random_unit_rows(2, 4, 2), n = random_unit_rows(4, 4, 3);
  EXPECT_THROW(hardneg_infonce(a, b, nullptr, 0.0), ContractError);
  EXPECT_THROW(hardneg_infonce(a, a, &n, 0.0), ContractError);
}

TEST(TrainConfigTest, ValidationAndSchedule) {
  TrainConfig c;
  c.batch_size = 1;
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.learning_rate = 0;
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.learning_rate = 0.01;
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 0, 100), 0.01);
  EXPECT_NEAR(learning_rate_at(c, 50, 100), 0.005, 1e-15);
  EXPECT_NEAR(learning_rate_at(c, 100, 100), 0.0, 1e-15);
  c.schedule = Schedule::constant;
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 77, 100), 0.01);
  c.warmup_steps = 4;
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 0, 100), 0.0025);
  EXPECT_EQ(parse_schedule("cosine"), Schedule::cosine);
  EXPECT_THROW(parse_schedule("linear"), ConfigError);
  EXPECT_EQ(parse_caption_sampling(to_string(CaptionSampling::all_captions)), CaptionSampling::all_captions);
}

TEST(EpochBatches, CoverEachChartOnceAndAreSeeded) {
  const auto ds = tiny_dataset(37, 0);
  TrainConfig c;
  c.batch_size = 8;
  const auto a = epoch_batches(ds, c, 0, ds.entries.size());
  EXPECT_EQ(a.size(), 5u);  // 37 = 4*8 + 5
  std::set<std::size_t> seen;
  for (const auto& b : a)
    for (const auto& s : b) {
      EXPECT_TRUE(seen.insert(s.entry).second);
      EXPECT_LT(s.qa, ds.entries[s.entry].qas.size());
    }
  EXPECT_EQ(seen.size(), 37u);
  const auto again = epoch_batches(ds, c, 0, ds.entries.size());
  const auto next = epoch_batches(ds, c, 1, ds.entries.size());
  auto first_entries = [](const auto& bs) {
    std::vector<std::size_t> v;
    for (const auto& s : bs[0]) v.push_back(s.entry);
    return v;
  };
  EXPECT_EQ(first_entries(a), first_entries(again));
  EXPECT_NE(first_entries(a), first_entries(next));
  c.batch_size = 36;  // leaves a single trailing sample
  EXPECT_EQ(epoch_batches(ds, c, 0, ds.entries.size()).size(), 1u);
}

TEST(Train, LossDecreasesAndRunsAreDeterministic) {
  const auto ds = tiny_dataset(24, 2);
  const auto enc = tiny_encoder();
  TrainConfig c;
  c.batch_size = 8;
  c.learning_rate = 3e-3;
  c.epochs = 6;
  c.k_train = 2;
  c.sampling = CaptionSampling::all_captions;
  const auto a = train(ds, enc, c, dualenc::init_params(enc, 1));
  const auto b = train(ds, enc, c, dualenc::init_params(enc, 1));
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
  ASSERT_EQ(a.log.epochs.size(), 6u);
  EXPECT_LT(a.log.epochs.back().mean_loss, a.log.epochs.front().mean_loss);
  EXPECT_EQ(a.log.steps.front().lr, c.learning_rate);
  EXPECT_LE(dualenc::logit_scale(a.params), enc.logit_scale_max);
}

TEST(Train, GradientVerificationAndErrors) {
  const auto ds = tiny_dataset(6, 1);
  const auto enc = tiny_encoder();
  TrainConfig c;
  c.batch_size = 4;
  c.epochs = 1;
  c.k_train = 1;
  c.verify_gradients = true;
  c.verify_entries = 2;
  EXPECT_NO_THROW(train(ds, enc, c, dualenc::init_params(enc, 2)));

  c.verify_gradients = false;
  c.k_train = 3;
  EXPECT_THROW(train(ds, enc, c, dualenc::init_params(enc, 2)), ContractError);
  c.k_train = 0;
  EXPECT_THROW(train(chartgen::Dataset{}, enc, c, dualenc::init_params(enc, 2)), ContractError);
  auto bad = dualenc::init_params(enc, 2);
  bad.erase("txt.tok");
  EXPECT_THROW(train(ds, enc, c, bad), ContractError);
}

TEST(Train, CheckpointsAndHeldoutHook) {
  const auto ds = tiny_dataset(8, 0);
  const auto enc = tiny_encoder();
  TrainConfig c;
  c.batch_size = 4;
  c.epochs = 2;
  c.checkpoint_every = 2;
  const auto dir = temp_dir("hooks");
  int calls = 0;
  TrainHooks hooks;
  hooks.checkpoint_dir = dir;
  hooks.heldout = [&](const num::ParamSet&) { return 0.25 * ++calls; };
  const auto r = train(ds, enc, c, dualenc::init_params(enc, 3), hooks);
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(r.log.epochs[1].heldout_accuracy.value(), 0.5);
  EXPECT_TRUE(fs::exists(dir / "step-2.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "step-4.ckpt"));
  EXPECT_EQ(load_checkpoint(dir / "final.ckpt", enc), r.params);
  fs::remove_all(dir);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto enc = tiny_encoder();
  auto p = dualenc::init_params(enc, 5);
  p.at("logit_scale")[0] = 0.1 + 0.2;  // not representable as a short decimal
  const auto bytes = checkpoint_bytes(p, enc);
  EXPECT_EQ(bytes, checkpoint_bytes(p, enc));
  EXPECT_EQ(bytes.substr(0, 8), "CHLBCKPT");
  EXPECT_EQ(parse_checkpoint(bytes, enc), p);
  const auto dir = temp_dir("roundtrip");
  save_checkpoint(p, enc, dir / "a.ckpt");
  EXPECT_EQ(load_checkpoint(dir / "a.ckpt", enc), p);
  fs::remove_all(dir);
}

TEST(Checkpoint, RejectsWrongConfigAndDamage) {
  const auto enc = tiny_encoder();
  const auto bytes = checkpoint_bytes(dualenc::init_params(enc, 5), enc);
  auto other = enc;
  other.heads = 4;
  EXPECT_THROW(parse_checkpoint(bytes, other), DigestError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 8), enc), FormatError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, 10), enc), FormatError);
  EXPECT_THROW(parse_checkpoint("not a checkpoint at all", enc), FormatError);
  auto corrupt = bytes;
  corrupt[20] = '#';
  EXPECT_THROW(parse_checkpoint(corrupt, enc), FormatError);
  const auto dir = temp_dir("damage");
  {
    std::ofstream(dir / "t.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  }
  try {
    load_checkpoint(dir / "t.ckpt", enc);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("t.ckpt"), std::string::npos);
  }
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt", enc), IoError);
  fs::remove_all(dir);
}
