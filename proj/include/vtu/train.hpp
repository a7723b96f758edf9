#pragma once

#include "vtu/keyvalue.hpp"
#include "vtu/losses.hpp"
#include "vtu/metrics.hpp"
#include "vtu/model.hpp"
#include "vtu/synthetic.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace vtu {

struct TrainConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index batch_size = 2;
  Index epochs = 150;
  Index patience = 20;             // epochs without val-loss improvement before lr halves
  double plateau_min_delta = 1e-4;
  std::uint64_t seed = 0;
  bool augment = true;
  LossWeights loss;
  ModelConfig model;

  void validate() const;

  /// Every key, including model dimensions; parse(to_key_values()) round-trips.
  KeyValues to_key_values() const;
  /// Starts from the defaults and applies `kv`; unknown keys are rejected.
  static TrainConfig from_key_values(const KeyValues& kv);
  static std::vector<std::string> known_keys();
};

/// Adam moments, one pair per parameter in named_parameters() order.
struct AdamState {
  std::vector<Tensorf> m, v;
  Index step = 0;

  static AdamState zeros_like(ModelParams<float>& params);
};

/// One bias-corrected Adam update over all parameters using their .grad().
void adam_step(ModelParams<float>& params, AdamState& state, const TrainConfig& cfg, double lr);

struct EpochRecord {
  Index epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;
  double val_dsc_bolus = 0;
  double val_dsc_pharynx = 0;
  double lr = 0;
};

inline constexpr const char* kEpochCsvHeader = "epoch,train_loss,val_loss,val_dsc_bolus,val_dsc_pharynx,lr";
std::string epoch_csv(const std::vector<EpochRecord>& history);
std::vector<EpochRecord> parse_epoch_csv(const std::string& text);

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  TrainConfig config;
  ModelParams<float> params;
  AdamState adam;
  Index epoch = 0;  // completed epochs
  double best_val_loss = 0;
  double plateau_ref = 0;  // val loss the plateau counter measures against
  Index plateau_count = 0;
  double lr = 0;
  std::vector<EpochRecord> history;
};

/// Directory layout: meta.txt (format_version, counters, hex floats, config
/// echo under "config."), history.csv, params/, adam_m/, adam_v/ with one
/// VTT1 file per parameter.
void save_checkpoint(const std::filesystem::path& dir, Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Mean mixture loss and mean per-head DSC (threshold 0.5) without recording.
struct EvalLoss {
  double loss = 0, dsc_bolus = 0, dsc_pharynx = 0;
};
EvalLoss evaluate_loss(const ModelParams<float>& params, const TrainConfig& cfg, const std::vector<FrameStack>& stacks);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  std::optional<std::filesystem::path> resume;  // checkpoint directory
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Checkpoint last;
  std::vector<EpochRecord> history;
  Index best_epoch = 0;
  ModelParams<float> best_params;
};

/// Epoch e shuffles the training stacks with a stream derived from
/// (seed, e), so a run resumed from a checkpoint replays the same sequence of
/// batches as an uninterrupted one. The last partial batch is dropped.
/// Writes `<out>/epochs.csv`, `<out>/best/` and `<out>/last/` checkpoints.
TrainResult train(const TrainConfig& cfg, const std::vector<FrameStack>& train_set,
                  const std::vector<FrameStack>& val_set, const TrainOptions& opts = {});

struct OverfitResult {
  std::vector<double> losses;  // one per step
  bool reached = false;
  Index steps = 0;
};

/// Sanity run on a single stack; far above the training rate because nothing
/// needs to generalize.
inline constexpr double kOverfitLr = 2e-2;

/// Repeated Adam steps on one stack (no augmentation) until the mixture
/// loss drops below `target` or `max_steps` is reached.
OverfitResult overfit_one(const TrainConfig& cfg, const FrameStack& sample, Index max_steps = 300,
                          double target = 0.05, double lr = kOverfitLr);

using Predictor = std::function<MaskPair<float>(const FrameStack&)>;

Predictor model_predictor(const ModelParams<float>& params, const ModelConfig& cfg);

/// Per-frame metrics for both heads on binarized predictions. With a
/// non-empty `overlay_dir` one PGM per frame and head is written: the frame
/// in gray, the target boundary black and the predicted boundary white.
MetricReport evaluate_stacks(const Predictor& predict, const std::vector<FrameStack>& stacks,
                             const std::filesystem::path& overlay_dir = {}, float level = 0.5f);

/// File name for an overlay: frame id with '/' replaced by '_', then _<head>.pgm.
std::string overlay_name(const std::string& frame_id, Head head);

}  // namespace vtu
