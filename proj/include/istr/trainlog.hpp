#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace istr {

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_metric = 0.0;  // accuracy / mean IoU / Text-Acc, per level
  double val_loss = 0.0;
  double val_metric = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  void save(const std::filesystem::path& path) const;
  static TrainLog load(const std::filesystem::path& path);
};

// Epoch (1-based) of the earliest maximum validation metric.
inline int select_checkpoint(const TrainLog& log) {
  if (log.epochs.empty()) throw std::invalid_argument("select_checkpoint: empty log");
  int best = 0;
  for (size_t i = 1; i < log.epochs.size(); ++i)
    if (log.epochs[i].val_metric > log.epochs[best].val_metric) best = static_cast<int>(i);
  return log.epochs[best].epoch;
}

}  // namespace istr
