// kadseg: feature-adaptation and affinity distillation for semantic
// segmentation on a synthetic benchmark, end to end on the CPU.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "kad/checkpoint.hpp"
#include "kad/config.hpp"
#include "kad/data.hpp"
#include "kad/eval.hpp"
#include "kad/models.hpp"
#include "kad/pnm.hpp"
#include "kad/train.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string data_dir;
  std::string teacher_ckpt;
  std::string ae_ckpt;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path,
                  "run configuration file (section.key = value lines)");
  cmd->add_option("--override,-o", args.overrides,
                  "section.key=value assignments applied after the file");
  cmd->add_option("--data-dir", args.data_dir,
                  "shorthand for -o paths.data_dir=...");
  cmd->add_option("--teacher-ckpt", args.teacher_ckpt,
                  "shorthand for -o paths.teacher_checkpoint=...");
  cmd->add_option("--ae-ckpt", args.ae_ckpt,
                  "shorthand for -o paths.ae_checkpoint=...");
}

kad::RunConfig load_config(const CommonArgs& args) {
  std::vector<std::string> overrides = args.overrides;
  if (!args.data_dir.empty()) overrides.push_back("paths.data_dir=" + args.data_dir);
  if (!args.teacher_ckpt.empty())
    overrides.push_back("paths.teacher_checkpoint=" + args.teacher_ckpt);
  if (!args.ae_ckpt.empty())
    overrides.push_back("paths.ae_checkpoint=" + args.ae_ckpt);
  if (args.config_path.empty())
    return kad::parse_config_text("", overrides, "<defaults>");
  return kad::parse_config(args.config_path, overrides);
}

kad::Network build_from_checkpoint(const kad::RunConfig& cfg,
                                   const std::string& arch,
                                   const std::string& ckpt_path) {
  kad::Checkpoint ck = kad::load_checkpoint(ckpt_path);
  if (arch == "teacher") {
    kad::Network net = kad::build_network(
        kad::SegArch::Teacher, cfg.model.teacher_os, cfg.data.num_classes,
        kad::derive_seed(cfg.train.seed, "teacher"));
    ck.load_into("teacher", net);
    return net;
  }
  if (arch == "student") {
    kad::Network net = kad::build_network(
        kad::SegArch::Student, cfg.model.student_os, cfg.data.num_classes,
        kad::derive_seed(cfg.train.seed, "student"));
    ck.load_into("student", net);
    return net;
  }
  throw kad::ConfigError("unknown architecture '" + arch + "' (teacher|student)");
}

int dispatch(int argc, char** argv) {
  CLI::App app{"knowledge-adaptation distillation for semantic segmentation"};
  app.require_subcommand(1);

  CommonArgs gen_args;
  std::string gen_out = "data";
  auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset");
  add_common(gen, gen_args);
  gen->add_option("--out", gen_out, "output directory")->required();

  CommonArgs tt_args;
  std::string tt_run = "runs/teacher", tt_resume;
  auto* tt = app.add_subcommand("train-teacher", "train the teacher segmenter");
  add_common(tt, tt_args);
  tt->add_option("--run-dir", tt_run, "run directory");
  tt->add_option("--resume", tt_resume, "checkpoint to resume from");

  CommonArgs ta_args;
  std::string ta_run = "runs/ae";
  auto* ta = app.add_subcommand("train-ae",
                                "train the translator autoencoder (stage 1)");
  add_common(ta, ta_args);
  ta->add_option("--run-dir", ta_run, "run directory");

  CommonArgs di_args;
  std::string di_run = "runs/distill", di_resume;
  auto* di = app.add_subcommand("distill", "train the student (stage 2)");
  add_common(di, di_args);
  di->add_option("--run-dir", di_run, "run directory");
  di->add_option("--resume", di_resume, "checkpoint to resume from");

  CommonArgs ba_args;
  std::string ba_run = "runs/baseline", ba_mode;
  auto* ba = app.add_subcommand("baseline", "comparison student runs");
  add_common(ba, ba_args);
  ba->add_option("--run-dir", ba_run, "run directory");
  ba->add_option("--mode", ba_mode, "plain|kd|fitnet|affinity_only")->required();

  CommonArgs ev_args;
  std::string ev_ckpt, ev_arch = "student", ev_split = "val", ev_out;
  auto* ev = app.add_subcommand("eval", "single-scale mIoU evaluation");
  add_common(ev, ev_args);
  ev->add_option("--ckpt", ev_ckpt, "checkpoint to evaluate")->required();
  ev->add_option("--arch", ev_arch, "teacher|student");
  ev->add_option("--split", ev_split, "train|val");
  ev->add_option("--out", ev_out, "also write the report to this file");

  CommonArgs am_args;
  std::string am_ckpt, am_arch = "student", am_image, am_out = "affinity.pgm";
  int am_row = 0, am_col = 0;
  auto* am = app.add_subcommand("affinity-map",
                                "export the affinity row of a feature-grid point");
  add_common(am, am_args);
  am->add_option("--ckpt", am_ckpt, "checkpoint to inspect")->required();
  am->add_option("--arch", am_arch, "teacher|student");
  am->add_option("--image", am_image, "input PPM image")->required();
  am->add_option("--row", am_row, "query row on the feature grid")->required();
  am->add_option("--col", am_col, "query column on the feature grid")->required();
  am->add_option("--out", am_out, "output PGM path");

  CommonArgs fl_args;
  std::string fl_arch = "student";
  int fl_os = 0, fl_input = 0;
  auto* fl = app.add_subcommand("flops", "analytical cost report");
  add_common(fl, fl_args);
  fl->add_option("--arch", fl_arch, "teacher|student");
  fl->add_option("--os", fl_os, "output stride (defaults to the config value)");
  fl->add_option("--input", fl_input, "input size (defaults to data.image_size)");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    kad::RunConfig cfg = load_config(gen_args);
    auto res = kad::generate(cfg.data, gen_out);
    std::printf("wrote %s and %s\n", res.train_manifest.c_str(),
                res.val_manifest.c_str());
    return 0;
  }
  if (tt->parsed()) {
    kad::RunConfig cfg = load_config(tt_args);
    auto res = kad::train_teacher(cfg, tt_run, tt_resume);
    std::printf("teacher checkpoint: %s\nfinal val_miou=%.6f\n",
                res.checkpoint_path.c_str(), res.final_val_miou);
    return 0;
  }
  if (ta->parsed()) {
    kad::RunConfig cfg = load_config(ta_args);
    auto res = kad::train_autoencoder(cfg, ta_run);
    std::printf("translator checkpoint: %s\nprobe_mse %.6g -> %.6g\n",
                res.checkpoint_path.c_str(), res.probe_mse_start,
                res.probe_mse_end);
    return 0;
  }
  if (di->parsed()) {
    kad::RunConfig cfg = load_config(di_args);
    auto res = kad::distill_student(cfg, di_run, kad::DistillMode::Full, di_resume);
    std::printf("student checkpoint: %s\nfinal val_miou=%.6f\n",
                res.checkpoint_path.c_str(), res.final_val_miou);
    return 0;
  }
  if (ba->parsed()) {
    kad::RunConfig cfg = load_config(ba_args);
    const kad::DistillMode mode = kad::parse_distill_mode(ba_mode);
    if (mode == kad::DistillMode::Full)
      throw kad::ConfigError("mode 'full' is the distill subcommand");
    auto res = kad::distill_student(cfg, ba_run, mode);
    std::printf("baseline(%s) checkpoint: %s\nfinal val_miou=%.6f\n",
                ba_mode.c_str(), res.checkpoint_path.c_str(), res.final_val_miou);
    return 0;
  }
  if (ev->parsed()) {
    kad::RunConfig cfg = load_config(ev_args);
    kad::Network net = build_from_checkpoint(cfg, ev_arch, ev_ckpt);
    const std::string manifest =
        (fs::path(cfg.paths.data_dir) / (ev_split + ".manifest")).string();
    if (!fs::exists(manifest))
      throw kad::MissingArtifactError("dataset manifest not found: " + manifest);
    kad::Dataset ds = kad::Dataset::load(manifest);
    auto result = kad::evaluate(net, ds);
    const std::string report = kad::format_miou_report(result.report);
    std::fputs(report.c_str(), stdout);
    if (!ev_out.empty()) {
      std::ofstream f(ev_out);
      if (!f) throw kad::IoError("cannot write report to " + ev_out);
      f << report;
    }
    return 0;
  }
  if (am->parsed()) {
    kad::RunConfig cfg = load_config(am_args);
    kad::Network net = build_from_checkpoint(cfg, am_arch, am_ckpt);
    kad::ImageU8 img = kad::read_pnm(am_image);
    if (img.channels != 3)
      throw kad::IoError("affinity-map expects a color PPM input");
    kad::Tensor x = kad::Tensor::zeros({1, 3, img.h, img.w});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < img.h; ++y)
        for (int xx = 0; xx < img.w; ++xx)
          x.data()[(static_cast<size_t>(c) * img.h + y) * img.w + xx] =
              static_cast<float>(img.at(c, y, xx)) / 255.0f;
    auto feats = kad::forward_features(net, x, kad::Mode::Eval);
    kad::ImageU8 map =
        kad::affinity_map(feats.features, am_row, am_col, img.h, img.w);
    kad::write_pnm(am_out, map);
    std::printf("wrote %s\n", am_out.c_str());
    return 0;
  }
  if (fl->parsed()) {
    kad::RunConfig cfg = load_config(fl_args);
    const int input = fl_input > 0 ? fl_input : cfg.data.image_size;
    kad::Network net;
    if (fl_arch == "teacher")
      net = kad::build_network(kad::SegArch::Teacher,
                               fl_os > 0 ? fl_os : cfg.model.teacher_os,
                               cfg.data.num_classes, 1);
    else if (fl_arch == "student")
      net = kad::build_network(kad::SegArch::Student,
                               fl_os > 0 ? fl_os : cfg.model.student_os,
                               cfg.data.num_classes, 1);
    else
      throw kad::ConfigError("unknown architecture '" + fl_arch + "'");
    std::fputs(kad::format_flops_report(kad::count_flops(net, input, input)).c_str(),
               stdout);
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const kad::ConfigError& e) {
    std::fprintf(stderr, "error category=config message=\"%s\"\n", e.what());
    return 2;
  } catch (const kad::MissingArtifactError& e) {
    std::fprintf(stderr, "error category=missing-artifact message=\"%s\"\n",
                 e.what());
    return 3;
  } catch (const kad::NumericError& e) {
    std::fprintf(stderr, "error category=numeric message=\"%s\"\n", e.what());
    return 4;
  } catch (const kad::IoError& e) {
    std::fprintf(stderr, "error category=io message=\"%s\"\n", e.what());
    return 5;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error category=internal message=\"%s\"\n", e.what());
    return 1;
  }
}
