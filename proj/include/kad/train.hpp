#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kad/checkpoint.hpp"
#include "kad/config.hpp"
#include "kad/net.hpp"

namespace kad {

// lr = base * (1 - iter/max_iter)^power; lr(0) = base, lr(max) = 0.
float poly_lr(float base_lr, int64_t iter, int64_t max_iter, float power);

// SGD with momentum and selective weight decay (conv weights only).
class SgdOptimizer {
 public:
  struct Slot {
    std::string name;
    Tensor param;
    Tensor velocity;
    bool decay = false;
  };

  void add_network(const std::string& prefix, Network& net);
  void step(float lr, float momentum, float weight_decay);
  void zero_grads();

  void save(Checkpoint& ck) const;
  void load(const Checkpoint& ck);

  std::vector<Slot>& slots() { return slots_; }

 private:
  std::vector<Slot> slots_;
};

// Student-training variants. Full is the two-loss objective; Plain is
// cross-entropy only; AffinityOnly drops the adaptation term; Kd and FitNet
// substitute their comparison loss (logged in the `adapt` column).
enum class DistillMode { Full, Plain, AffinityOnly, Kd, FitNet };
DistillMode parse_distill_mode(const std::string& name);
std::string distill_mode_name(DistillMode mode);

struct StageResult {
  std::string checkpoint_path;
  double final_val_miou = -1.0;
  // translator-stage probe statistics (fixed un-augmented batch)
  double probe_mse_start = 0.0;
  double probe_mse_end = 0.0;
  double probe_code_l1_end = 0.0;
};

// Stage 0: teacher trained with cross-entropy only.
StageResult train_teacher(const RunConfig& cfg, const std::string& run_dir,
                          const std::string& resume_from = {});

// Stage 1: translator autoencoder on frozen teacher features.
StageResult train_autoencoder(const RunConfig& cfg, const std::string& run_dir);

// Stage 2 and baselines: student against ground truth plus the selected
// teacher signals; teacher and encoder stay frozen (checksum-verified).
StageResult distill_student(const RunConfig& cfg, const std::string& run_dir,
                            DistillMode mode,
                            const std::string& resume_from = {});

}  // namespace kad
