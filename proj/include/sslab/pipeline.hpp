#pragma once

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sslab/evaluation.hpp"
#include "sslab/json_writer.hpp"
#include "sslab/model.hpp"
#include "sslab/text.hpp"

namespace sslab {

inline constexpr const char* kModelTrainingLossDefinition =
    "mean of the per-step training MSE (dropout active) over the final epoch";

/// Shortest round-trip decimal form of a double.
inline std::string format_shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

/// Plot-ready loss curve: one row per optimizer step.
inline std::string step_loss_csv(const TrainTrace& t) {
  std::string out = "step,epoch,train_loss\n";
  const std::size_t per_epoch = std::max<std::size_t>(1, t.steps_per_epoch);
  for (std::size_t s = 0; s < t.step_losses.size(); ++s) {
    out += std::to_string(s + 1) + "," + std::to_string(s / per_epoch + 1) + "," +
           format_shortest(t.step_losses[s]) + "\n";
  }
  return out;
}

/// One row per epoch; wall-clock stays out so the file is reproducible.
inline std::string epoch_loss_csv(const TrainTrace& t) {
  std::string out = "epoch,train_loss,validation_loss\n";
  for (std::size_t e = 0; e < t.epoch_train_losses.size(); ++e) {
    out += std::to_string(e + 1) + "," + format_shortest(t.epoch_train_losses[e]) + ",";
    if (e < t.epoch_validation_losses.size()) out += format_shortest(t.epoch_validation_losses[e]);
    out += "\n";
  }
  return out;
}

/// Everything a trained fold leaves behind, kept per fold id.
struct FoldTraining {
  TrainTrace trace;
  std::vector<std::filesystem::path> files;
};

struct ModelRunOptions {
  ModelConfig config;  // vocab_size is filled per fold
  TextOptions text;
  std::optional<std::filesystem::path> artifact_dir;  // checkpoints and loss curves go here
};

inline std::filesystem::path vocab_path_for(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  return p.replace_extension(".vocab");
}

/// Fold runner for the encoder: per-fold vocabulary from the training side,
/// per-fold seed = seed xor fold, final-epoch mean step loss as training loss.
/// `results` must have one slot per fold; each fold writes only its own slot.
inline FoldRunner model_fold_runner(const ModelRunOptions& opts, std::vector<FoldTraining>& results) {
  return [&opts, &results](const Dataset& d, std::span<const std::size_t> train_idx,
                           std::span<const std::size_t> val_idx, std::size_t fold) {
    ModelConfig cfg = opts.config;
    cfg.seed = opts.config.seed ^ static_cast<std::uint64_t>(fold);
    TrainResult res = train(d, train_idx, val_idx, cfg, opts.text);
    FoldOutcome out;
    out.train_loss = res.trace.final_train_loss();
    out.predictions.reserve(val_idx.size());
    for (auto i : val_idx) {
      out.predictions.push_back(forward(encode(d[i], res.vocab, res.config.max_len, res.config.input_layout),
                                        res.params, res.config));
    }
    FoldTraining& slot = results.at(fold);
    if (opts.artifact_dir) {
      const auto& dir = *opts.artifact_dir;
      const std::string stem = "fold_" + std::to_string(fold + 1);
      const auto ckpt = dir / (stem + ".ckpt");
      save_checkpoint(res.params, res.config, ckpt);
      res.vocab.save(vocab_path_for(ckpt));
      io::write_text(dir / (stem + ".config.json"), io::dump(config_json(res.config), io::RealFormat::shortest));
      io::write_text(dir / (stem + "_steps.csv"), step_loss_csv(res.trace));
      io::write_text(dir / (stem + "_epochs.csv"), epoch_loss_csv(res.trace));
      slot.files = {ckpt, vocab_path_for(ckpt), dir / (stem + ".config.json"), dir / (stem + "_steps.csv"),
                    dir / (stem + "_epochs.csv")};
    }
    slot.trace = std::move(res.trace);
    return out;
  };
}

}  // namespace sslab
