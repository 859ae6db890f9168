#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kad/data.hpp"
#include "kad/distill.hpp"

namespace kad {

// Per-stage optimizer schedule (poly decay).
struct Schedule {
  float base_lr = 0.007f;
  int max_iterations = 2000;
  float power = 0.9f;
  int batch_size = 8;
  float momentum = 0.9f;
  float weight_decay = 4e-5f;
  uint64_t seed = 0;  // filled from train.seed at run time

  void validate(const std::string& stage) const;
};

// Complete declarative description of an experiment. The serialized form is
// canonical: parse(serialize(cfg)) == cfg, and the hash is taken over it.
struct RunConfig {
  DatasetSpec data;

  struct Model {
    int teacher_os = 8;
    int student_os = 16;
    int adapter_depth = 3;  // 1 keeps the single-layer adapter variant
  } model;

  DistillWeights distill;

  Schedule teacher;
  // translator stage: constant high lr, large weight decay, small batch so
  // one epoch holds enough steps; max_iterations is derived from ae.epochs
  // and the train split size, and the poly power is not consulted
  Schedule ae{0.1f, 2000, 0.9f, 4, 0.9f, 1e-4f};
  int ae_epochs = 1;
  Schedule student;

  struct Train {
    uint64_t seed = 1;
    int threads = 1;
    int val_interval = 200;
    int checkpoint_interval = 500;
    bool augment = true;
  } train;

  struct Paths {
    std::string data_dir;
    std::string teacher_checkpoint;
    std::string ae_checkpoint;
  } paths;

  void validate() const;
};

// Strict line-oriented `section.key = value` format: unknown keys, bad
// types and malformed lines fail with their line number. Overrides are
// `section.key=value` strings applied after the file.
RunConfig parse_config(const std::string& path,
                       const std::vector<std::string>& overrides);
RunConfig parse_config_text(const std::string& text,
                            const std::vector<std::string>& overrides,
                            const std::string& origin = "<string>");

std::string serialize_config(const RunConfig& cfg);
uint64_t config_hash(const RunConfig& cfg);

uint64_t fnv1a64(const void* data, size_t len);

}  // namespace kad
