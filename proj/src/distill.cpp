#include "kad/distill.hpp"

#include <cmath>
#include <string>

namespace kad {

void DistillWeights::validate() const {
  if (alpha < 0 || beta < 0 || gamma < 0)
    throw ConfigError("distillation weights must be non-negative");
  if (p != 1 && p != 2)
    throw ConfigError("distance order p must be 1 or 2, got " + std::to_string(p));
  if (q != 2)
    throw ConfigError("only q=2 channel normalization is implemented, got q=" +
                      std::to_string(q));
  if (temperature <= 0) throw ConfigError("temperature must be positive");
}

AffinityMatrix affinity_matrix(const Tensor& features) {
  if (features.rank() != 4 || features.dim(0) != 1)
    throw ShapeError("affinity_matrix: expects a single sample [1,c,h,w], got " +
                     shape_str(features.shape()));
  AffinityMatrix out;
  out.h = features.dim(2);
  out.w = features.dim(3);
  const int m = out.h * out.w;
  Tensor v = flatten_positions(channel_l2_normalize(features, kNormEps));
  out.matrix = scaled_gram(v, 1.0f / static_cast<float>(m));
  return out;
}

Tensor reconstruction_loss(const Tensor& phi_t, Network& encoder,
                           Network& decoder, float alpha, Mode mode) {
  Tensor code = forward(encoder, phi_t, mode);
  Tensor recon = forward(decoder, code, mode);
  if (recon.shape() != phi_t.shape())
    throw ShapeError("reconstruction_loss: round trip produced " +
                     shape_str(recon.shape()) + " from " +
                     shape_str(phi_t.shape()));
  Tensor diff = sub(phi_t, recon);
  Tensor mse_term = mean(mul(diff, diff));
  if (alpha == 0.0f) return mse_term;
  return add(mse_term, scale(mean(abs(code)), alpha));
}

Tensor normalized_feature_distance(const Tensor& u, const Tensor& v, int p) {
  if (u.shape() != v.shape())
    throw ShapeError("normalized_feature_distance: shape mismatch " +
                     shape_str(u.shape()) + " vs " + shape_str(v.shape()));
  if (p != 1 && p != 2)
    throw ConfigError("distance order p must be 1 or 2, got " + std::to_string(p));
  const int64_t positions =
      static_cast<int64_t>(u.dim(0)) * u.dim(2) * u.dim(3);
  Tensor un = channel_l2_normalize(u, kNormEps);
  Tensor vn = channel_l2_normalize(v, kNormEps);
  Tensor d = sub(un, vn);
  Tensor per_elem = p == 2 ? mul(d, d) : abs(d);
  return scale(sum(per_elem), 1.0f / static_cast<float>(positions));
}

Tensor adaptation_loss(const Tensor& phi_s, const Tensor& phi_t,
                       Network& adapter, Network& encoder, int p, int q,
                       Mode adapter_mode) {
  if (q != 2)
    throw ConfigError("only q=2 channel normalization is implemented");
  Tensor adapted = forward(adapter, phi_s, adapter_mode);
  Tensor code = translate(encoder, phi_t, Mode::Eval);
  return normalized_feature_distance(adapted, code, p);
}

Tensor affinity_pair_loss(const Tensor& a_feats, const Tensor& b_feats) {
  if (a_feats.shape() != b_feats.shape())
    throw ShapeError("affinity_pair_loss: spatial grids differ, " +
                     shape_str(a_feats.shape()) + " vs " +
                     shape_str(b_feats.shape()));
  const int n = a_feats.dim(0);
  Tensor total;
  for (int ni = 0; ni < n; ++ni) {
    AffinityMatrix a = affinity_matrix(slice_batch(a_feats, ni));
    AffinityMatrix b = affinity_matrix(slice_batch(b_feats, ni));
    Tensor d = sub(a.matrix, b.matrix);
    Tensor l = mean(mul(d, d));
    total = total.defined() ? add(total, l) : l;
  }
  return scale(total, 1.0f / static_cast<float>(n));
}

Tensor affinity_loss(const Tensor& phi_s, const Tensor& phi_t,
                     Network& affinity_adapter, Network& encoder,
                     Mode adapter_mode) {
  Tensor adapted = forward(affinity_adapter, phi_s, adapter_mode);
  Tensor code = translate(encoder, phi_t, Mode::Eval);
  return affinity_pair_loss(adapted, code);
}

Tensor kd_soft_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                    float temperature) {
  Tensor s = student_logits;
  if (s.dim(2) != teacher_logits.dim(2) || s.dim(3) != teacher_logits.dim(3))
    s = upsample_bilinear(s, teacher_logits.dim(2), teacher_logits.dim(3), false);
  return kd_soft_divergence(s, teacher_logits, temperature);
}

Tensor fitnet_loss(const Tensor& phi_s, const Tensor& phi_t, Layer& projection) {
  if (projection.kind != LayerKind::Conv || projection.spec.kh != 1 ||
      projection.spec.kw != 1)
    throw ShapeError("fitnet_loss: projection must be a 1x1 convolution");
  Tensor up = phi_s;
  if (up.dim(2) != phi_t.dim(2) || up.dim(3) != phi_t.dim(3))
    up = upsample_bilinear(up, phi_t.dim(2), phi_t.dim(3), false);
  Tensor projected = conv2d(up, projection.weight, projection.bias, projection.spec);
  Tensor d = sub(projected, phi_t);
  return mean(mul(d, d));
}

Tensor total_student_loss(const Tensor& ce, const Tensor& adapt,
                          const Tensor& aff, const DistillWeights& weights) {
  weights.validate();
  const struct {
    const char* name;
    const Tensor* t;
  } parts[] = {{"ce", &ce}, {"adapt", &adapt}, {"aff", &aff}};
  for (const auto& part : parts) {
    if (!part.t->defined() || part.t->numel() != 1)
      throw ShapeError(std::string("total_student_loss: ") + part.name +
                       " must be a scalar");
    if (!std::isfinite(part.t->item()))
      throw NumericError(std::string("total_student_loss: component '") +
                         part.name + "' is non-finite");
  }
  return add(ce, add(scale(adapt, weights.beta), scale(aff, weights.gamma)));
}

}  // namespace kad
