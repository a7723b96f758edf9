#include "vtu/train.hpp"

#include "vtu/io.hpp"
#include "vtu/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

namespace vtu {

namespace fs = std::filesystem;

namespace {

std::string join_indices(const std::array<Index, 4>& a) {
  std::vector<std::string> parts;
  for (Index v : a) parts.push_back(std::to_string(v));
  return join(parts);
}

std::array<Index, 4> parse_indices(const KeyValues& kv, const std::string& key) {
  const auto parts = kv.get_list(key);
  if (parts.size() != 4) throw ConfigError("key '" + key + "': expected 4 comma-separated integers");
  std::array<Index, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    KeyValues one;
    one.set(key, parts[i]);
    out[i] = one.get_int(key);
  }
  return out;
}

ModelParams<float> clone_params(const ModelParams<float>& p) {
  ModelParams<float> out = p;
  out.visit([](const std::string&, Tensorf& t) { t = t.clone(); });
  return out;
}

void require_grad(ModelParams<float>& p) {
  p.visit([](const std::string&, Tensorf& t) { t.set_requires_grad(true); });
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (plateau_min_delta < 0) throw ConfigError("plateau_min_delta must be >= 0");
  try {
    loss.validate();
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::vector<std::string> TrainConfig::known_keys() {
  return {"lr", "beta1", "beta2", "adam_eps", "batch_size", "epochs", "patience", "plateau_min_delta", "seed",
          "augment", "loss.bce", "loss.dice", "loss.hausdorff", "snippet_length", "height", "width",
          "encoder.stage_channels", "encoder.blocks_per_stage", "encoder.norm_groups", "vit.patch_size",
          "vit.hidden_dim", "vit.num_layers", "vit.num_heads", "vit.mlp_dim", "decoder.final_channels",
          "decoder.final_upsample"};
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv;
  kv.set("lr", format_double(lr));
  kv.set("beta1", format_double(beta1));
  kv.set("beta2", format_double(beta2));
  kv.set("adam_eps", format_double(adam_eps));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("epochs", std::to_string(epochs));
  kv.set("patience", std::to_string(patience));
  kv.set("plateau_min_delta", format_double(plateau_min_delta));
  kv.set("seed", std::to_string(seed));
  kv.set("augment", augment ? "true" : "false");
  kv.set("loss.bce", format_double(loss.bce));
  kv.set("loss.dice", format_double(loss.dice));
  kv.set("loss.hausdorff", format_double(loss.hausdorff));
  kv.set("snippet_length", std::to_string(model.snippet_length));
  kv.set("height", std::to_string(model.height));
  kv.set("width", std::to_string(model.width));
  kv.set("encoder.stage_channels", join_indices(model.encoder.stage_channels));
  kv.set("encoder.blocks_per_stage", join_indices(model.encoder.blocks_per_stage));
  kv.set("encoder.norm_groups", std::to_string(model.encoder.norm_groups));
  kv.set("vit.patch_size", std::to_string(model.vit.patch_size));
  kv.set("vit.hidden_dim", std::to_string(model.vit.hidden_dim));
  kv.set("vit.num_layers", std::to_string(model.vit.num_layers));
  kv.set("vit.num_heads", std::to_string(model.vit.num_heads));
  kv.set("vit.mlp_dim", std::to_string(model.vit.mlp_dim));
  kv.set("decoder.final_channels", std::to_string(model.decoder.final_channels));
  kv.set("decoder.final_upsample", to_string(model.decoder.final_upsample));
  return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  kv.require_known(known_keys());
  TrainConfig c;
  auto dbl = [&](const char* k, double& dst) {
    if (kv.has(k)) dst = kv.get_double(k);
  };
  auto idx = [&](const char* k, Index& dst) {
    if (kv.has(k)) dst = kv.get_int(k);
  };
  dbl("lr", c.lr);
  dbl("beta1", c.beta1);
  dbl("beta2", c.beta2);
  dbl("adam_eps", c.adam_eps);
  idx("batch_size", c.batch_size);
  idx("epochs", c.epochs);
  idx("patience", c.patience);
  dbl("plateau_min_delta", c.plateau_min_delta);
  if (kv.has("seed")) c.seed = kv.get_uint("seed");
  if (kv.has("augment")) c.augment = kv.get_bool("augment");
  dbl("loss.bce", c.loss.bce);
  dbl("loss.dice", c.loss.dice);
  dbl("loss.hausdorff", c.loss.hausdorff);
  idx("snippet_length", c.model.snippet_length);
  idx("height", c.model.height);
  idx("width", c.model.width);
  if (kv.has("encoder.stage_channels")) c.model.encoder.stage_channels = parse_indices(kv, "encoder.stage_channels");
  if (kv.has("encoder.blocks_per_stage"))
    c.model.encoder.blocks_per_stage = parse_indices(kv, "encoder.blocks_per_stage");
  idx("encoder.norm_groups", c.model.encoder.norm_groups);
  idx("vit.patch_size", c.model.vit.patch_size);
  idx("vit.hidden_dim", c.model.vit.hidden_dim);
  idx("vit.num_layers", c.model.vit.num_layers);
  idx("vit.num_heads", c.model.vit.num_heads);
  idx("vit.mlp_dim", c.model.vit.mlp_dim);
  idx("decoder.final_channels", c.model.decoder.final_channels);
  if (kv.has("decoder.final_upsample")) {
    try {
      c.model.decoder.final_upsample = parse_final_upsample(kv.get("decoder.final_upsample"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  c.validate();
  return c;
}

AdamState AdamState::zeros_like(ModelParams<float>& params) {
  AdamState s;
  params.visit([&](const std::string&, Tensorf& t) {
    s.m.push_back(Tensorf::zeros(t.shape()));
    s.v.push_back(Tensorf::zeros(t.shape()));
  });
  return s;
}

void adam_step(ModelParams<float>& params, AdamState& state, const TrainConfig& cfg, double lr) {
  state.step += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, double(state.step));
  const double c2 = 1.0 - std::pow(b2, double(state.step));
  std::size_t k = 0;
  params.visit([&](const std::string& name, Tensorf& t) {
    if (k >= state.m.size()) throw std::logic_error("adam_step: optimizer state does not cover " + name);
    auto m = state.m[k].mutable_data();
    auto v = state.v[k].mutable_data();
    ++k;
    if (!t.has_grad()) return;
    auto g = t.grad();
    auto x = t.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<float>(b1 * m[i] + (1 - b1) * gi);
      v[i] = static_cast<float>(b2 * v[i] + (1 - b2) * gi * gi);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      x[i] = static_cast<float>(x[i] - lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
  });
}

std::string epoch_csv(const std::vector<EpochRecord>& history) {
  std::string out = std::string(kEpochCsvHeader) + "\r\n";
  for (const auto& r : history)
    out += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," + format_double(r.val_loss) + "," +
           format_double(r.val_dsc_bolus) + "," + format_double(r.val_dsc_pharynx) + "," + format_double(r.lr) + "\r\n";
  return out;
}

std::vector<EpochRecord> parse_epoch_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<EpochRecord> out;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      if (line != kEpochCsvHeader) throw FormatError("epoch log: unexpected header '" + line + "'");
      header = false;
      continue;
    }
    const auto f = split(line);
    if (f.size() != 6) throw FormatError("epoch log: expected 6 fields in '" + line + "'");
    EpochRecord r;
    r.epoch = std::stoll(f[0]);
    r.train_loss = parse_double(f[1]);
    r.val_loss = parse_double(f[2]);
    r.val_dsc_bolus = parse_double(f[3]);
    r.val_dsc_pharynx = parse_double(f[4]);
    r.lr = parse_double(f[5]);
    out.push_back(r);
  }
  return out;
}

void save_checkpoint(const fs::path& dir, Checkpoint& ckpt) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  KeyValues meta;
  meta.set("format_version", std::to_string(kCheckpointFormatVersion));
  meta.set("epoch", std::to_string(ckpt.epoch));
  meta.set("adam_step", std::to_string(ckpt.adam.step));
  meta.set("best_val_loss", format_hex(ckpt.best_val_loss));
  meta.set("plateau_ref", format_hex(ckpt.plateau_ref));
  meta.set("plateau_count", std::to_string(ckpt.plateau_count));
  meta.set("lr", format_hex(ckpt.lr));
  const KeyValues cfg = ckpt.config.to_key_values();
  for (const auto& k : cfg.keys()) meta.set("config." + k, cfg.get(k));
  write_text(dir / "meta.txt", meta.to_text());
  write_text(dir / "history.csv", epoch_csv(ckpt.history));

  std::size_t k = 0;
  const bool has_adam = !ckpt.adam.m.empty();
  ckpt.params.visit([&](const std::string& name, Tensorf& t) {
    write_vtt1(dir / "params" / (name + ".vtt1"), t);
    if (has_adam) {
      write_vtt1(dir / "adam_m" / (name + ".vtt1"), ckpt.adam.m.at(k));
      write_vtt1(dir / "adam_v" / (name + ".vtt1"), ckpt.adam.v.at(k));
    }
    ++k;
  });
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.txt";
  if (!fs::exists(meta_path)) throw std::runtime_error("checkpoint not found: " + meta_path.string());
  const KeyValues meta = KeyValues::load(meta_path);
  const auto version = meta.get_int("format_version");
  if (version != kCheckpointFormatVersion)
    throw FormatError("checkpoint " + dir.string() + " has format_version " + std::to_string(version) +
                      ", expected " + std::to_string(kCheckpointFormatVersion));
  KeyValues cfg_kv;
  for (const auto& k : meta.keys())
    if (k.rfind("config.", 0) == 0) cfg_kv.set(k.substr(7), meta.get(k));

  Checkpoint c;
  c.config = TrainConfig::from_key_values(cfg_kv);
  c.epoch = meta.get_int("epoch");
  c.best_val_loss = meta.get_double("best_val_loss");
  c.plateau_ref = meta.get_double("plateau_ref");
  c.plateau_count = meta.get_int("plateau_count");
  c.lr = meta.get_double("lr");
  c.params = ModelParams<float>::init(c.config.model, c.config.seed);
  const bool has_adam = fs::exists(dir / "adam_m");
  c.adam.step = meta.get_int("adam_step");
  c.params.visit([&](const std::string& name, Tensorf& t) {
    auto load_into = [&](const fs::path& p, const Shape& shape) {
      Tensorf v = read_vtt1(p);
      if (v.shape() != shape)
        throw FormatError("checkpoint tensor " + p.string() + " has shape " + shape_str(v.shape()) + ", expected " +
                          shape_str(shape));
      return v;
    };
    t = load_into(dir / "params" / (name + ".vtt1"), t.shape());
    if (has_adam) {
      c.adam.m.push_back(load_into(dir / "adam_m" / (name + ".vtt1"), t.shape()));
      c.adam.v.push_back(load_into(dir / "adam_v" / (name + ".vtt1"), t.shape()));
    }
  });
  if (!has_adam) c.adam = AdamState::zeros_like(c.params);
  if (fs::exists(dir / "history.csv")) {
    const auto bytes = read_file(dir / "history.csv");
    c.history = parse_epoch_csv(std::string(bytes.begin(), bytes.end()));
  }
  return c;
}

EvalLoss evaluate_loss(const ModelParams<float>& params, const TrainConfig& cfg, const std::vector<FrameStack>& stacks) {
  EvalLoss e;
  if (stacks.empty()) return e;
  for (const auto& s : stacks) {
    const MaskPair<float> pred = model_forward(s.frames, params, cfg.model);
    e.loss += mixture_loss(pred, s.target, cfg.loss).item();
    e.dsc_bolus += dsc(threshold(pred.bolus), threshold(s.target.bolus));
    e.dsc_pharynx += dsc(threshold(pred.pharynx), threshold(s.target.pharynx));
  }
  const double n = double(stacks.size());
  e.loss /= n;
  e.dsc_bolus /= n;
  e.dsc_pharynx /= n;
  return e;
}

namespace {

enum : std::uint64_t { kShuffleStream = 0x5A0F, kAugmentStream = 0xA0A0 };

// Mean mixture loss over a batch, recorded on `tape`.
Tensorf batch_loss(const std::vector<const FrameStack*>& batch, const ModelParams<float>& params,
                   const TrainConfig& cfg) {
  Tensorf total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const MaskPair<float> pred = model_forward(batch[i]->frames, params, cfg.model);
    Tensorf l = mixture_loss(pred, batch[i]->target, cfg.loss);
    total = i == 0 ? l : add(total, l);
  }
  return scale(total, 1.0f / static_cast<float>(batch.size()));
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<FrameStack>& train_set,
                  const std::vector<FrameStack>& val_set, const TrainOptions& opts) {
  cfg.validate();
  if (train_set.size() < static_cast<std::size_t>(cfg.batch_size))
    throw std::invalid_argument("train: fewer training stacks than one batch");

  Checkpoint state;
  if (opts.resume) {
    state = load_checkpoint(*opts.resume);
    // The epoch budget may be extended on resume; everything else must match.
    TrainConfig a = cfg, b = state.config;
    a.epochs = b.epochs = 0;
    if (a.to_key_values().to_text() != b.to_key_values().to_text())
      throw ConfigError("resume: configuration differs from the checkpoint's");
    state.config = cfg;
  } else {
    state.config = cfg;
    state.params = ModelParams<float>::init(cfg.model, cfg.seed);
    state.adam = AdamState::zeros_like(state.params);
    state.best_val_loss = std::numeric_limits<double>::infinity();
    state.plateau_ref = std::numeric_limits<double>::infinity();
    state.lr = cfg.lr;
  }
  require_grad(state.params);

  TrainResult result;
  result.best_params = clone_params(state.params);
  for (const auto& r : state.history)
    if (r.val_loss == state.best_val_loss) result.best_epoch = r.epoch;

  const bool write = !opts.out_dir.empty();
  if (write) fs::create_directories(opts.out_dir);

  const auto n = static_cast<Index>(train_set.size());
  const Index batches = n / cfg.batch_size;
  for (Index epoch = state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    Rng shuffle_rng(mix_seed(cfg.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    double train_loss = 0;
    for (Index b = 0; b < batches; ++b) {
      std::vector<FrameStack> augmented;
      std::vector<const FrameStack*> batch;
      augmented.reserve(static_cast<std::size_t>(cfg.batch_size));
      for (Index i = 0; i < cfg.batch_size; ++i) {
        const Index pos = b * cfg.batch_size + i;
        const FrameStack& s = train_set[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])];
        if (cfg.augment) {
          const auto seed =
              mix_seed(cfg.seed, kAugmentStream, static_cast<std::uint64_t>(epoch) * 1000003u + std::uint64_t(pos));
          augmented.push_back(augment(s, seed));
          batch.push_back(&augmented.back());
        } else {
          batch.push_back(&s);
        }
      }
      state.params.visit([](const std::string&, Tensorf& t) { t.zero_grad(); });
      Tape<float> tape;
      Tensorf loss;
      {
        TapeScope<float> scope(tape);
        loss = batch_loss(batch, state.params, cfg);
      }
      tape.backward(loss);
      adam_step(state.params, state.adam, cfg, state.lr);
      train_loss += loss.item();
    }
    train_loss /= double(std::max<Index>(batches, 1));

    const EvalLoss val = evaluate_loss(state.params, cfg, val_set);
    EpochRecord rec{epoch, train_loss, val.loss, val.dsc_bolus, val.dsc_pharynx, state.lr};
    state.history.push_back(rec);
    state.epoch = epoch;

    if (val.loss < state.best_val_loss) {
      state.best_val_loss = val.loss;
      result.best_epoch = epoch;
      result.best_params = clone_params(state.params);
      if (write) save_checkpoint(opts.out_dir / "best", state);
    }
    // One halving per plateau of `patience` epochs, then the count restarts.
    if (val.loss < state.plateau_ref - cfg.plateau_min_delta) {
      state.plateau_ref = val.loss;
      state.plateau_count = 0;
    } else if (++state.plateau_count >= cfg.patience) {
      state.lr *= 0.5;
      state.plateau_count = 0;
    }
    if (write) {
      save_checkpoint(opts.out_dir / "last", state);
      write_text(opts.out_dir / "epochs.csv", epoch_csv(state.history));
    }
    if (opts.on_epoch) opts.on_epoch(rec);
  }
  if (write && !fs::exists(opts.out_dir / "best")) save_checkpoint(opts.out_dir / "best", state);
  result.history = state.history;
  result.last = std::move(state);
  return result;
}

OverfitResult overfit_one(const TrainConfig& cfg, const FrameStack& sample, Index max_steps, double target,
                          double lr) {
  cfg.validate();
  ModelParams<float> params = ModelParams<float>::init(cfg.model, cfg.seed);
  require_grad(params);
  AdamState adam = AdamState::zeros_like(params);
  OverfitResult r;
  const std::vector<const FrameStack*> batch{&sample};
  for (Index step = 0; step < max_steps; ++step) {
    params.visit([](const std::string&, Tensorf& t) { t.zero_grad(); });
    Tape<float> tape;
    Tensorf loss;
    {
      TapeScope<float> scope(tape);
      loss = batch_loss(batch, params, cfg);
    }
    r.losses.push_back(loss.item());
    r.steps = step + 1;
    if (loss.item() < target) {
      r.reached = true;
      break;
    }
    tape.backward(loss);
    adam_step(params, adam, cfg, lr);
  }
  return r;
}

Predictor model_predictor(const ModelParams<float>& params, const ModelConfig& cfg) {
  return [params, cfg](const FrameStack& s) { return model_forward(s.frames, params, cfg); };
}

std::string overlay_name(const std::string& frame_id, Head head) {
  std::string name = frame_id;
  std::replace(name.begin(), name.end(), '/', '_');
  return name + "_" + head_name(head) + ".pgm";
}

MetricReport evaluate_stacks(const Predictor& predict, const std::vector<FrameStack>& stacks,
                             const fs::path& overlay_dir, float level) {
  std::vector<FrameMetrics> rows;
  for (const auto& s : stacks) {
    const MaskPair<float> pred = predict(s);
    for (Head h : kHeads) {
      const Tensorf& p = h == Head::Bolus ? pred.bolus : pred.pharynx;
      const Tensorf& t = h == Head::Bolus ? s.target.bolus : s.target.pharynx;
      const BinaryMask pm = threshold(p, level), tm = threshold(t, 0.5f);
      rows.push_back(frame_metrics(s.frame_id(), h, pm, tm));
      if (!overlay_dir.empty()) {
        const Tensorf& frame = s.frames[static_cast<std::size_t>(s.center)];
        const BinaryMask pb = boundary(pm), tb = boundary(tm);
        GrayImage img{static_cast<int>(tm.width), static_cast<int>(tm.height), {}};
        img.pixels.resize(static_cast<std::size_t>(tm.size()));
        for (std::size_t i = 0; i < img.pixels.size(); ++i) {
          const double v = std::clamp(double(frame[static_cast<Index>(i)]), 0.0, 1.0);
          img.pixels[i] = static_cast<std::uint8_t>(std::lround(32 + 191 * v));
          if (tb.bits[i]) img.pixels[i] = 0;
          if (pb.bits[i]) img.pixels[i] = 255;
        }
        write_pgm(overlay_dir / overlay_name(s.frame_id(), h), img);
      }
    }
  }
  return summarize(std::move(rows));
}

}  // namespace vtu
