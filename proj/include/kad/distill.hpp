#pragma once

#include "kad/models.hpp"
#include "kad/net.hpp"
#include "kad/ops.hpp"

namespace kad {

// Loss weights and normalization orders for the distillation objective.
// total = ce + beta * adaptation + gamma * affinity; alpha weights the
// sparsity term of the autoencoder objective.
struct DistillWeights {
  float alpha = 1e-7f;
  float beta = 50.0f;
  float gamma = 1.0f;
  int p = 2;  // per-position distance: 2 = squared L2, 1 = L1
  int q = 2;  // per-position channel normalization order (L2 only)
  float temperature = 2.0f;  // KD baseline softening

  void validate() const;
};

inline constexpr float kNormEps = 1e-8f;

// m x m normalized pairwise similarity over the spatial positions of a
// single feature map; m = h*w. Entries lie in [-1/m, 1/m], the diagonal is
// 1/m for nonzero vectors, and the matrix is exactly symmetric.
struct AffinityMatrix {
  int h = 0, w = 0;
  Tensor matrix;  // [m, m]
};

AffinityMatrix affinity_matrix(const Tensor& features);  // [1,c,h,w]

// Autoencoder objective: mean squared reconstruction error plus alpha times
// the mean absolute code activation. mode applies to the translator (Train
// during its own training stage).
Tensor reconstruction_loss(const Tensor& phi_t, Network& encoder,
                           Network& decoder, float alpha, Mode mode);

// Mean over all spatial positions of the p-distance between channel-wise
// L2-normalized vectors of u and v. The core of the adaptation objective.
Tensor normalized_feature_distance(const Tensor& u, const Tensor& v, int p);

// Adaptation objective: distance between the adapted student features and
// the encoded teacher features. The encoder runs in eval mode; freezing its
// parameters is the trainer's contract.
Tensor adaptation_loss(const Tensor& phi_s, const Tensor& phi_t,
                       Network& adapter, Network& encoder, int p, int q,
                       Mode adapter_mode);

// Batch mean of the mean squared difference between the two affinity
// matrices of each sample.
Tensor affinity_pair_loss(const Tensor& a_feats, const Tensor& b_feats);

Tensor affinity_loss(const Tensor& phi_s, const Tensor& phi_t,
                     Network& affinity_adapter, Network& encoder,
                     Mode adapter_mode);

// Comparison baseline: temperature-softened distribution matching on the
// logits. Student logits are upsampled to the teacher resolution if needed.
Tensor kd_soft_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                    float temperature);

// Comparison baseline: L2 on upsampled student features after a trainable
// 1x1 projection bridging the channel mismatch.
Tensor fitnet_loss(const Tensor& phi_s, const Tensor& phi_t, Layer& projection);

// ce + beta*adapt + gamma*aff; rejects non-finite components by name.
Tensor total_student_loss(const Tensor& ce, const Tensor& adapt,
                          const Tensor& aff, const DistillWeights& weights);

}  // namespace kad
