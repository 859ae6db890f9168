#include <doctest.h>

#include "kad/models.hpp"
#include "kad/rng.hpp"
#include "test_helpers.hpp"

using kad::Mode;
using kad::Network;
using kad::Rng;
using kad::SegArch;
using kad::Tensor;
using testutil::random_tensor;

TEST_CASE("output stride resolution converts strides to dilations") {
  // teacher backbone: nominal strides 2,2,2,1 behind a stride-2 stem
  auto os8 = kad::resolve_output_stride({2, 2, 2, 1}, 2, 8);
  REQUIRE(os8.size() == 4);
  CHECK(os8[0].stride == 2);
  CHECK(os8[1].stride == 2);
  CHECK(os8[2].stride == 1);
  CHECK(os8[3].stride == 1);
  CHECK(os8[2].dilation == 2);
  CHECK(os8[3].dilation == 2);

  auto os4 = kad::resolve_output_stride({2, 2, 2, 1}, 2, 4);
  CHECK(os4[1].stride == 1);
  CHECK(os4[1].dilation == 2);
  CHECK(os4[2].dilation == 4);
  CHECK(os4[3].dilation == 4);

  auto s32 = kad::resolve_output_stride({2, 2, 2, 2}, 2, 32);
  for (auto& sc : s32) {
    CHECK(sc.stride == 2);
    CHECK(sc.dilation == 1);
  }

  // os 4 on the all-stride-2 backbone converts three stages
  auto s4 = kad::resolve_output_stride({2, 2, 2, 2}, 2, 4);
  CHECK(s4[0].stride == 2);
  CHECK(s4[1].dilation == 2);
  CHECK(s4[2].dilation == 4);
  CHECK(s4[3].dilation == 8);

  // strides beyond the backbone's reach are errors
  CHECK_THROWS_AS(kad::resolve_output_stride({2, 2, 2, 1}, 2, 32),
                  kad::ConfigError);
}

TEST_CASE("teacher: feature geometry at OS 8") {
  Network t = kad::build_network(SegArch::Teacher, 8, 4, 1);
  Tensor img = Tensor::zeros({1, 3, 64, 64});
  auto f = kad::forward_features(t, img, Mode::Eval);
  CHECK(f.features.shape() == kad::Shape{1, 64, 8, 8});
  CHECK(f.logits.shape() == kad::Shape{1, 4, 64, 64});
}

TEST_CASE("student: feature geometry at OS 16") {
  Network s = kad::build_network(SegArch::Student, 16, 4, 1);
  Tensor img = Tensor::zeros({2, 3, 64, 64});
  auto f = kad::forward_features(s, img, Mode::Eval);
  CHECK(f.features.shape() == kad::Shape{2, 32, 4, 4});
  CHECK(f.logits.shape() == kad::Shape{2, 4, 64, 64});
}

TEST_CASE("same seed builds bit-identical networks") {
  Network a = kad::build_network(SegArch::Student, 16, 4, 99);
  Network b = kad::build_network(SegArch::Student, 16, 4, 99);
  auto pa = kad::named_params(a);
  auto pb = kad::named_params(b);
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(pa[i].tensor.bit_equal(pb[i].tensor));
  }
  Network c = kad::build_network(SegArch::Student, 16, 4, 100);
  CHECK_FALSE(kad::named_params(c)[0].tensor.bit_equal(pa[0].tensor));
}

TEST_CASE("unsupported output strides are rejected") {
  CHECK_THROWS_AS(kad::build_network(SegArch::Teacher, 32, 4, 1),
                  kad::ConfigError);
  CHECK_THROWS_AS(kad::build_network(SegArch::Student, 4, 4, 1),
                  kad::ConfigError);
}

TEST_CASE("OS 8 features carry 4x the positions of OS 16") {
  Network t8 = kad::build_network(SegArch::Teacher, 8, 4, 5);
  Network t16 = kad::build_network(SegArch::Teacher, 16, 4, 5);
  Tensor img = Tensor::zeros({1, 3, 64, 64});
  auto f8 = kad::forward_features(t8, img, Mode::Eval);
  auto f16 = kad::forward_features(t16, img, Mode::Eval);
  CHECK(f8.features.dim(2) * f8.features.dim(3) ==
        4 * f16.features.dim(2) * f16.features.dim(3));
}

TEST_CASE("eval-mode forward is reproducible") {
  Network t = kad::build_network(SegArch::Teacher, 8, 4, 3);
  Rng rng(17);
  Tensor img = random_tensor({1, 3, 64, 64}, rng, 0.0f, 1.0f);
  auto a = kad::forward_features(t, img, Mode::Eval);
  auto b = kad::forward_features(t, img, Mode::Eval);
  CHECK(a.logits.bit_equal(b.logits));
  CHECK(a.features.bit_equal(b.features));
}

TEST_CASE("indivisible inputs are rejected with a padding hint") {
  Network t = kad::build_network(SegArch::Teacher, 8, 4, 1);
  Tensor img = Tensor::zeros({1, 3, 60, 60});
  CHECK_THROWS_WITH_AS(kad::forward_features(t, img, Mode::Eval),
                       doctest::Contains("pad to 64x64"), kad::ShapeError);
}

TEST_CASE("translator halves and restores feature shape") {
  auto ae = kad::build_translator(kad::kTeacherChannels, 7);
  Rng rng(23);
  Tensor phi_t = random_tensor({1, 64, 8, 8}, rng);
  Tensor code = kad::translate(ae.encoder, phi_t, Mode::Eval);
  CHECK(code.shape() == kad::Shape{1, 64, 4, 4});
  Tensor recon = kad::forward(ae.decoder, code, Mode::Eval);
  CHECK(recon.shape() == phi_t.shape());

  Tensor odd = random_tensor({1, 64, 7, 8}, rng);
  CHECK_THROWS_AS(kad::translate(ae.encoder, odd, Mode::Eval), kad::ShapeError);
}

TEST_CASE("encoder output lands on the student grid at (8, 16)") {
  Network t = kad::build_network(SegArch::Teacher, 8, 4, 1);
  Network s = kad::build_network(SegArch::Student, 16, 4, 2);
  auto ae = kad::build_translator(kad::kTeacherChannels, 3);
  Rng rng(29);
  Tensor img = random_tensor({1, 3, 64, 64}, rng, 0.0f, 1.0f);
  auto ft = kad::forward_features(t, img, Mode::Eval);
  auto fs = kad::forward_features(s, img, Mode::Eval);
  Tensor code = kad::translate(ae.encoder, ft.features, Mode::Eval);
  CHECK(code.dim(2) == fs.features.dim(2));
  CHECK(code.dim(3) == fs.features.dim(3));
  CHECK_NOTHROW(kad::validate_grid_alignment(8, 16, 64, 64));
  CHECK_THROWS_AS(kad::validate_grid_alignment(8, 8, 64, 64), kad::ConfigError);
}

TEST_CASE("adapters preserve the grid and map to teacher width") {
  Network cf = kad::build_adapter("adapter_f", kad::kStudentChannels,
                                  kad::kTeacherChannels, 3, 11);
  Rng rng(31);
  Tensor phi_s = random_tensor({2, 32, 4, 4}, rng);
  Tensor out = kad::forward(cf, phi_s, Mode::Eval);
  CHECK(out.shape() == kad::Shape{2, 64, 4, 4});

  Network cf1 = kad::build_adapter("adapter_f", 32, 64, 1, 11);
  CHECK(kad::forward(cf1, phi_s, Mode::Eval).shape() == kad::Shape{2, 64, 4, 4});
  CHECK_THROWS_AS(kad::build_adapter("adapter_f", 32, 64, 2, 11),
                  kad::ConfigError);
}

TEST_CASE("student has strictly fewer parameters than the teacher") {
  Network t = kad::build_network(SegArch::Teacher, 8, 4, 1);
  Network s = kad::build_network(SegArch::Student, 16, 4, 1);
  CHECK(kad::param_count(s) < kad::param_count(t));
}
