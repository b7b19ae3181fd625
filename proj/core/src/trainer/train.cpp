#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "chartlab/numerics/gradcheck.hpp"
#include "chartlab/trainer/trainer.hpp"
#include "chartlab/util/digest.hpp"
#include "chartlab/util/error.hpp"
#include "chartlab/util/rng.hpp"

namespace chartlab::trainer {

namespace {

using chartgen::ChartEntry;
using chartgen::Dataset;
using nlohmann::json;

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Prepared {
  // Per entry, per qa: positive tokens and hard-negative tokens (first k_train).
  std::vector<std::vector<dualenc::TokenIds>> positive;
  std::vector<std::vector<std::vector<dualenc::TokenIds>>> negatives;
};

Prepared prepare(const Dataset& data, const dualenc::Tokenizer& tok, const TrainConfig& cfg, std::size_t charts) {
  Prepared p;
  p.positive.resize(charts);
  p.negatives.resize(charts);
  for (std::size_t e = 0; e < charts; ++e) {
    const ChartEntry& entry = data.entries[e];
    for (const auto& qa : entry.qas) {
      const auto* pos = entry.positive_for(qa.qa_id);
      if (!pos) throw ContractError("train: qa " + qa.qa_id + " has no positive caption");
      p.positive[e].push_back(tok.encode(pos->text));
      std::vector<dualenc::TokenIds> negs;
      if (cfg.k_train > 0) {
        const auto all = entry.negatives_for(qa.qa_id);
        if (all.size() < static_cast<std::size_t>(cfg.k_train)) {
          throw ContractError("train: qa " + qa.qa_id + " has " + std::to_string(all.size()) +
                              " hard negatives, k_train is " + std::to_string(cfg.k_train));
        }
        for (int k = 0; k < cfg.k_train; ++k) negs.push_back(tok.encode(all[static_cast<std::size_t>(k)]->text));
      }
      p.negatives[e].push_back(std::move(negs));
    }
  }
  return p;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint64_t get_uint(std::string_view in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

constexpr std::string_view kMagic = "CHLBCKPT";

}  // namespace

std::string_view to_string(Schedule s) { return s == Schedule::cosine ? "cosine" : "constant"; }
std::string_view to_string(CaptionSampling s) {
  return s == CaptionSampling::one_per_image ? "one_per_image" : "all_captions";
}

Schedule parse_schedule(std::string_view s) {
  if (s == "cosine") return Schedule::cosine;
  if (s == "constant") return Schedule::constant;
  throw ConfigError("schedule", "expected 'cosine' or 'constant', got '" + std::string(s) + "'");
}

CaptionSampling parse_caption_sampling(std::string_view s) {
  if (s == "one_per_image") return CaptionSampling::one_per_image;
  if (s == "all_captions") return CaptionSampling::all_captions;
  throw ConfigError("sampling", "expected 'one_per_image' or 'all_captions', got '" + std::string(s) + "'");
}

void validate(const TrainConfig& c) {
  if (c.batch_size < 2) throw ConfigError("batch_size", "must be at least 2 for in-batch contrast");
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) throw ConfigError("learning_rate", "must be positive");
  if (c.epochs < 0) throw ConfigError("epochs", "must be non-negative");
  if (c.k_train < 0) throw ConfigError("k_train", "must be non-negative");
  if (c.warmup_steps < 0) throw ConfigError("warmup_steps", "must be non-negative");
  if (c.checkpoint_every < 0) throw ConfigError("checkpoint_every", "must be non-negative");
  if (c.verify_entries < 1) throw ConfigError("verify_entries", "must be positive");
  num::validate(num::AdamHyper{c.learning_rate, c.beta1, c.beta2, c.epsilon});
}

std::string describe(const TrainConfig& c) {
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "batch=%d;lr=%.17g;epochs=%d;k=%d;seed=%llu;schedule=%s;warmup=%d;ckpt=%d;sampling=%s;b1=%.17g;"
                "b2=%.17g;eps=%.17g;max_charts=%zu",
                c.batch_size, c.learning_rate, c.epochs, c.k_train, static_cast<unsigned long long>(c.seed),
                std::string(to_string(c.schedule)).c_str(), c.warmup_steps, c.checkpoint_every,
                std::string(to_string(c.sampling)).c_str(), c.beta1, c.beta2, c.epsilon, c.max_charts);
  return buf;
}

double learning_rate_at(const TrainConfig& c, std::size_t step, std::size_t total) {
  double lr = c.learning_rate;
  if (c.warmup_steps > 0 && step < static_cast<std::size_t>(c.warmup_steps)) {
    lr *= static_cast<double>(step + 1) / c.warmup_steps;
  }
  if (c.schedule == Schedule::cosine && total > 0) {
    lr *= 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total)));
  }
  return lr;
}

std::vector<std::vector<Sample>> epoch_batches(const Dataset& data, const TrainConfig& c, int epoch,
                                               std::size_t charts) {
  Rng rng(mix_seed(c.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(epoch)));
  std::vector<Sample> samples;
  if (c.sampling == CaptionSampling::one_per_image) {
    std::vector<std::size_t> order(charts);
    for (std::size_t i = 0; i < charts; ++i) order[i] = i;
    rng.shuffle(order);
    for (auto e : order) {
      const auto n = data.entries[e].qas.size();
      if (n == 0) continue;
      samples.push_back({e, static_cast<std::size_t>(rng.below(n))});
    }
  } else {
    for (std::size_t e = 0; e < charts; ++e) {
      for (std::size_t q = 0; q < data.entries[e].qas.size(); ++q) samples.push_back({e, q});
    }
    rng.shuffle(samples);
  }
  std::vector<std::vector<Sample>> batches;
  const auto bs = static_cast<std::size_t>(c.batch_size);
  for (std::size_t start = 0; start < samples.size(); start += bs) {
    const auto end = std::min(samples.size(), start + bs);
    if (end - start < 2) break;  // a lone sample has no in-batch negatives
    batches.emplace_back(samples.begin() + static_cast<std::ptrdiff_t>(start),
                         samples.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::string TrainLog::to_csv() const {
  std::string out = "step,epoch,loss,lr\n";
  for (const auto& s : steps) {
    out += std::to_string(s.step) + "," + std::to_string(s.epoch) + "," + g17(s.loss) + "," + g17(s.lr) + "\n";
  }
  return out;
}

std::string TrainLog::summary_json() const {
  json j;
  j["steps"] = steps.size();
  j["final_loss"] = steps.empty() ? json(nullptr) : json(steps.back().loss);
  json ep = json::array();
  for (const auto& e : epochs) {
    ep.push_back({{"epoch", e.epoch},
                  {"mean_loss", e.mean_loss},
                  {"heldout_accuracy", e.heldout_accuracy ? json(*e.heldout_accuracy) : json(nullptr)},
                  {"seconds", e.seconds}});
  }
  j["epochs"] = ep;
  return j.dump(2) + "\n";
}

TrainResult train(const Dataset& data, const dualenc::EncoderConfig& enc, const TrainConfig& cfg, ParamSet params,
                  const TrainHooks& hooks) {
  validate(cfg);
  dualenc::validate(enc);
  dualenc::check_params(params, enc);
  const std::size_t charts =
      cfg.max_charts == 0 ? data.entries.size() : std::min(cfg.max_charts, data.entries.size());
  if (charts == 0 || data.qa_count() == 0) throw ContractError("train: dataset is empty");

  const dualenc::Tokenizer tok(enc);
  const Prepared prep = prepare(data, tok, cfg, charts);

  std::size_t steps_per_epoch = epoch_batches(data, cfg, 0, charts).size();
  if (steps_per_epoch == 0) throw ContractError("train: fewer than 2 samples, no batch can be formed");
  const std::size_t total = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);

  num::AdamState adam;
  adam.hyper = {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon};
  TrainLog log;
  std::size_t step = 0;

  auto build_loss = [&](Tape& t, const ParamSet& p, const std::vector<Sample>& batch) {
    std::vector<const chartgen::RasterImage*> images;
    std::vector<dualenc::TokenIds> pos, neg;
    for (const auto& s : batch) {
      images.push_back(&data.entries[s.entry].image);
      pos.push_back(prep.positive[s.entry][s.qa]);
      for (const auto& n : prep.negatives[s.entry][s.qa]) neg.push_back(n);
    }
    Var img = dualenc::image_embeddings(t, p, enc, images);
    Var txt = dualenc::text_embeddings(t, p, enc, pos);
    Var negv = neg.empty() ? Var{} : dualenc::text_embeddings(t, p, enc, neg);
    return hardneg_infonce(t, img, txt, negv, t.param(p, "logit_scale"));
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    const auto batches = epoch_batches(data, cfg, epoch, charts);
    for (const auto& batch : batches) {
      Tape t;
      num::GradientSet grads;
      double loss = 0.0;
      try {
        Var l = build_loss(t, params, batch);
        loss = t.value(l).item();
        grads = t.backward(l);
      } catch (const NumericalError& e) {
        throw NumericalError("train: step " + std::to_string(step) + ": " + e.what());
      }
      if (cfg.verify_gradients) {
        num::FdOptions opt;
        opt.max_entries_per_param = static_cast<std::size_t>(cfg.verify_entries);
        opt.seed = mix_seed(cfg.seed, step);
        opt.denominator_floor = 1e-7;
        const auto report = num::finite_diff_report(
            [&](Tape& tt, const ParamSet& p) { return build_loss(tt, p, batch); }, params, 1e-5, opt);
        if (report.max_relative_error >= 1e-4) {
          throw NumericalError("train: step " + std::to_string(step) + ": gradient check failed on " +
                               report.worst_param + " (relative error " + g17(report.max_relative_error) + ")");
        }
      }
      const double lr = learning_rate_at(cfg, step, total);
      adam.hyper.learning_rate = lr;
      num::adam_update(adam, params, grads);
      dualenc::clamp_logit_scale(params, enc);
      log.steps.push_back({step, epoch, loss, lr});
      loss_sum += loss;
      ++step;
      if (hooks.checkpoint_dir && cfg.checkpoint_every > 0 && step % static_cast<std::size_t>(cfg.checkpoint_every) == 0) {
        save_checkpoint(params, enc, *hooks.checkpoint_dir / ("step-" + std::to_string(step) + ".ckpt"));
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size());
    if (hooks.heldout) rec.heldout_accuracy = hooks.heldout(params);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    log.epochs.push_back(rec);
  }
  if (hooks.checkpoint_dir) save_checkpoint(params, enc, *hooks.checkpoint_dir / "final.ckpt");
  return {std::move(params), std::move(log)};
}

std::string checkpoint_bytes(const ParamSet& params, const dualenc::EncoderConfig& enc) {
  json header;
  header["version"] = kCheckpointVersion;
  header["config_digest"] = dualenc::config_digest(enc);
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size() * sizeof(double);
  }
  header["tensors"] = tensors;
  header["payload_bytes"] = offset;
  const std::string h = header.dump();

  std::string out(kMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, h.size());
  out += h;
  for (const auto& [name, t] : params) {
    for (double v : t.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put_u64(out, bits);
    }
  }
  return out;
}

void save_checkpoint(const ParamSet& params, const dualenc::EncoderConfig& enc, const std::filesystem::path& path) {
  write_file(path, checkpoint_bytes(params, enc));
}

ParamSet parse_checkpoint(std::string_view in, const dualenc::EncoderConfig& enc) {
  const std::size_t fixed = kMagic.size() + 4 + 8;
  if (in.size() < fixed || in.substr(0, kMagic.size()) != kMagic) throw FormatError("checkpoint: bad magic or truncated header");
  const auto version = get_uint(in, kMagic.size(), 4);
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto hlen = get_uint(in, kMagic.size() + 4, 8);
  if (hlen > in.size() - fixed) throw FormatError("checkpoint: truncated header");
  json header;
  try {
    header = json::parse(in.substr(fixed, hlen));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
  const std::size_t payload_at = fixed + hlen;
  ParamSet params;
  try {
    const auto want = dualenc::config_digest(enc);
    const auto got = header.at("config_digest").get<std::string>();
    if (got != want) {
      throw DigestError("checkpoint: written for encoder config " + got.substr(0, 12) + ", expected " + want.substr(0, 12));
    }
    const auto payload = header.at("payload_bytes").get<std::uint64_t>();
    if (in.size() - payload_at != payload) {
      throw FormatError("checkpoint: payload is " + std::to_string(in.size() - payload_at) + " bytes, header says " +
                        std::to_string(payload));
    }
    for (const auto& jt : header.at("tensors")) {
      const auto shape = jt.at("shape").get<std::vector<std::size_t>>();
      const auto offset = jt.at("offset").get<std::uint64_t>();
      std::size_t count = 1;
      for (auto d : shape) count *= d;
      if (offset + count * sizeof(double) > payload) throw FormatError("checkpoint: tensor extends past payload");
      std::vector<double> data(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t bits = get_uint(in, payload_at + offset + i * 8, 8);
        std::memcpy(&data[i], &bits, sizeof bits);
      }
      params.emplace(jt.at("name").get<std::string>(), Tensor(shape, std::move(data)));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
  try {
    dualenc::check_params(params, enc);
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return params;
}

ParamSet load_checkpoint(const std::filesystem::path& path, const dualenc::EncoderConfig& enc) {
  const std::string bytes = read_file(path);
  try {
    return parse_checkpoint(bytes, enc);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const DigestError& e) {
    throw DigestError(path.string() + ": " + e.what());
  }
}

}  // namespace chartlab::trainer
