// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "labes/graph.hpp"
#include "labes/model.hpp"

namespace labes {

// Optimizer moments and schedule bookkeeping carried inside a checkpoint so
// training is resumable.
struct TrainStateBlob {
  int epoch = 0;
  std::string phase;  // "supervised-pretrain" | "semi" | "self-train"
  double lr = 0.0;
  double best_dev = -1.0;
  int best_epoch = -1;
  int bad_epochs = 0;
  long adam_step = 0;
  std::string rng_state;  // serialized mt19937_64 stream
};

// Self-describing archive: magic+version header, JSON metadata (ModelConfig,
// schema, vocabulary, optional train state, array directory), then raw
// little-endian float64 data. Save/load round-trips bit-exactly.
void save_checkpoint(const std::string& path, const LabesModel& model,
                     const TrainStateBlob* train_state = nullptr,
                     const GradBuffer* adam_m = nullptr,
                     const GradBuffer* adam_v = nullptr);

struct LoadedCheckpoint {
  ModelConfig config;
  Schema schema;
  Vocabulary vocab;
  std::optional<TrainStateBlob> train_state;
  // Parameter values keyed by name; applied onto a freshly built model.
  std::vector<ParameterSet::Entry> arrays;
  bool has_adam = false;
  std::vector<Mat> adam_m, adam_v;  // aligned with the model's parameters
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Builds a model from a loaded checkpoint (restores every array).
LabesModel model_from_checkpoint(const LoadedCheckpoint& ck);

}  // namespace labes
