#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kad/net.hpp"

namespace kad {

// Per-stage (stride, dilation) assignment realizing a requested output
// stride: stages whose nominal stride-2 is converted to 1 have their
// dilation doubled cumulatively, so the receptive field is preserved while
// the resolution is not reduced.
struct StageConfig {
  int stride = 1;
  int dilation = 1;
};

// nominal holds the as-designed per-stage strides; stem_stride contributes
// to the product. Throws ConfigError when os is not reachable.
std::vector<StageConfig> resolve_output_stride(const std::vector<int>& nominal,
                                               int stem_stride, int os);

inline constexpr int kTeacherChannels = 64;  // C_t
inline constexpr int kStudentChannels = 32;  // C_s

enum class SegArch { Teacher, Student };

// Deterministic construction: the same seed yields bit-identical parameters.
// Teacher accepts os in {4,8,16}; student accepts os in {8,16,32}.
Network build_network(SegArch arch, int os, int num_classes, uint64_t seed);

// Symmetric three-plus-three translator; the encoder halves the spatial
// resolution exactly once (first layer stride 2), the decoder restores it
// (last layer stride 2). The final decoder layer carries no activation so
// reconstructions are not sign-constrained.
struct TranslatorAE {
  Network encoder;
  Network decoder;
};
TranslatorAE build_translator(int channels, uint64_t seed);

// Student-side adapter head: depth 3x3 conv-BN-ReLU layers mapping
// in_channels to out_channels in the first layer. depth must be 1 or 3.
Network build_adapter(const std::string& name, int in_channels, int out_channels,
                      int depth, uint64_t seed);

struct Features {
  Tensor features;  // pre-classifier activations [N, C, H/os, W/os]
  Tensor logits;    // upsampled to input resolution [N, K, H, W]
};

// Requires input H and W divisible by 32 so every stride boundary is exact.
Features forward_features(Network& net, const Tensor& images, Mode mode);

// Encoder half of the translator applied to teacher features; spatial
// extents must be even (the stride-2 layer halves them exactly).
Tensor translate(Network& encoder, const Tensor& teacher_features, Mode mode);

// Startup validation that C_f/C_a outputs and E(phi_t) land on the same
// grid for a given (teacher_os, student_os, input) combination.
void validate_grid_alignment(int teacher_os, int student_os, int input_h,
                             int input_w);

}  // namespace kad
