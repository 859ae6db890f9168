#include "kad/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "kad/distill.hpp"
#include "kad/eval.hpp"
#include "kad/models.hpp"
#include "kad/threadpool.hpp"

namespace fs = std::filesystem;

namespace kad {

float poly_lr(float base_lr, int64_t iter, int64_t max_iter, float power) {
  if (max_iter < 1) throw ConfigError("poly_lr: max_iter must be >= 1");
  if (iter < 0 || iter > max_iter)
    throw ConfigError("poly_lr: iteration " + std::to_string(iter) +
                      " outside [0," + std::to_string(max_iter) + "]");
  if (iter == max_iter) return 0.0f;
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(max_iter);
  return static_cast<float>(base_lr * std::pow(frac, static_cast<double>(power)));
}

void SgdOptimizer::add_network(const std::string& prefix, Network& net) {
  for (auto& p : named_params(net)) {
    p.tensor.set_requires_grad(true);
    slots_.push_back({prefix + "." + p.name, p.tensor,
                      Tensor::zeros(p.tensor.shape()), p.decay});
  }
}

void SgdOptimizer::step(float lr, float momentum, float weight_decay) {
  for (auto& s : slots_) {
    std::vector<Tensor> p{s.param};
    std::vector<Tensor> g{s.param.ensure_grad()};
    std::vector<Tensor> v{s.velocity};
    sgd_step(p, g, v, lr, momentum, s.decay ? weight_decay : 0.0f);
  }
}

void SgdOptimizer::zero_grads() {
  for (auto& s : slots_) s.param.zero_grad();
}

void SgdOptimizer::save(Checkpoint& ck) const {
  for (const auto& s : slots_) ck.add("opt.velocity." + s.name, s.velocity);
}

void SgdOptimizer::load(const Checkpoint& ck) {
  for (auto& s : slots_) {
    const Tensor* t = ck.find("opt.velocity." + s.name);
    if (!t) throw IoError("checkpoint is missing velocity for " + s.name);
    if (t->shape() != s.velocity.shape())
      throw IoError("velocity shape mismatch for " + s.name);
    std::copy(t->data(), t->data() + t->numel(), s.velocity.data());
  }
}

DistillMode parse_distill_mode(const std::string& name) {
  if (name == "full") return DistillMode::Full;
  if (name == "plain") return DistillMode::Plain;
  if (name == "affinity_only") return DistillMode::AffinityOnly;
  if (name == "kd") return DistillMode::Kd;
  if (name == "fitnet") return DistillMode::FitNet;
  throw ConfigError("unknown training mode '" + name +
                    "' (full|plain|affinity_only|kd|fitnet)");
}

std::string distill_mode_name(DistillMode mode) {
  switch (mode) {
    case DistillMode::Full: return "full";
    case DistillMode::Plain: return "plain";
    case DistillMode::AffinityOnly: return "affinity_only";
    case DistillMode::Kd: return "kd";
    case DistillMode::FitNet: return "fitnet";
  }
  return "?";
}

namespace {

struct RunContext {
  Dataset train_set;
  Dataset val_set;
  std::ofstream metrics;
};

std::string manifest_path(const RunConfig& cfg, const char* split) {
  if (cfg.paths.data_dir.empty())
    throw ConfigError("paths.data_dir is not set; run gen-data first");
  return (fs::path(cfg.paths.data_dir) / (std::string(split) + ".manifest"))
      .string();
}

RunContext open_run(const RunConfig& cfg, const std::string& run_dir) {
  cfg.validate();
  ThreadPool::set_global_threads(cfg.train.threads);
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw IoError("cannot create run directory " + run_dir);

  const std::string train_m = manifest_path(cfg, "train");
  if (!fs::exists(train_m))
    throw MissingArtifactError("dataset manifest not found: " + train_m);
  RunContext ctx;
  ctx.train_set = Dataset::load(train_m);
  ctx.val_set = Dataset::load(manifest_path(cfg, "val"));
  if (ctx.train_set.num_classes() != cfg.data.num_classes)
    throw ConfigError("dataset declares " +
                      std::to_string(ctx.train_set.num_classes()) +
                      " classes, config expects " +
                      std::to_string(cfg.data.num_classes));

  std::ofstream eff(fs::path(run_dir) / "config.effective");
  if (!eff) throw IoError("cannot write effective config in " + run_dir);
  eff << serialize_config(cfg);

  ctx.metrics.open(fs::path(run_dir) / "metrics.log", std::ios::app);
  if (!ctx.metrics) throw IoError("cannot open metrics log in " + run_dir);
  return ctx;
}

void log_iteration(std::ofstream& out, int64_t iter, float lr, double ce,
                   double adapt, double aff, double total) {
  char buf[192];
  std::snprintf(buf, sizeof(buf),
                "iter=%lld lr=%.9g ce=%.9g adapt=%.9g aff=%.9g total=%.9g\n",
                static_cast<long long>(iter), static_cast<double>(lr), ce,
                adapt, aff, total);
  out << buf;
  out.flush();
}

void log_val(std::ofstream& out, double miou_value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "val_miou=%.9g\n", miou_value);
  out << buf;
  out.flush();
}

void abort_if_diverged(double total, int64_t iter) {
  if (!std::isfinite(total))
    throw NumericError("training diverged: non-finite total loss at iteration " +
                       std::to_string(iter));
}

Network load_frozen_teacher(const RunConfig& cfg) {
  if (cfg.paths.teacher_checkpoint.empty())
    throw MissingArtifactError("paths.teacher_checkpoint is not set");
  Checkpoint ck = load_checkpoint(cfg.paths.teacher_checkpoint);
  Network teacher =
      build_network(SegArch::Teacher, cfg.model.teacher_os, cfg.data.num_classes,
                    derive_seed(cfg.train.seed, "teacher"));
  ck.load_into("teacher", teacher);
  set_requires_grad(teacher, false);
  return teacher;
}

TranslatorAE load_frozen_translator(const RunConfig& cfg) {
  if (cfg.paths.ae_checkpoint.empty())
    throw MissingArtifactError("paths.ae_checkpoint is not set");
  Checkpoint ck = load_checkpoint(cfg.paths.ae_checkpoint);
  TranslatorAE ae = build_translator(kTeacherChannels,
                                     derive_seed(cfg.train.seed, "translator"));
  ck.load_into("encoder", ae.encoder);
  ck.load_into("decoder", ae.decoder);
  set_requires_grad(ae.encoder, false);
  set_requires_grad(ae.decoder, false);
  return ae;
}

uint64_t frozen_checksum(Network& net) {
  uint64_t h = params_checksum(net);
  for (auto& b : named_buffers(net)) {
    const uint64_t t = fnv1a64(
        b.tensor.data(), sizeof(float) * static_cast<size_t>(b.tensor.numel()));
    h ^= t;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void verify_frozen(Network& net, uint64_t expected, const char* what) {
  if (frozen_checksum(net) != expected)
    throw std::logic_error(std::string("frozen-parameter contract violated: ") +
                           what + " changed during training");
}

}  // namespace

StageResult train_teacher(const RunConfig& cfg, const std::string& run_dir,
                          const std::string& resume_from) {
  RunContext ctx = open_run(cfg, run_dir);
  Network teacher =
      build_network(SegArch::Teacher, cfg.model.teacher_os, cfg.data.num_classes,
                    derive_seed(cfg.train.seed, "teacher"));
  SgdOptimizer opt;
  opt.add_network("teacher", teacher);

  int64_t start_iter = 0;
  if (!resume_from.empty()) {
    Checkpoint ck = load_checkpoint(resume_from);
    if (ck.config_hash != config_hash(cfg))
      throw ConfigError("resume refused: checkpoint was written under a "
                        "different configuration");
    ck.load_into("teacher", teacher);
    opt.load(ck);
    start_iter = static_cast<int64_t>(ck.scalar("meta.iteration"));
  }

  const Schedule& sched = cfg.teacher;
  BatchStream stream(ctx.train_set, sched.batch_size, cfg.train.augment,
                     derive_seed(cfg.train.seed, "data:teacher"));

  auto save = [&](int64_t iter, const std::string& name) {
    Checkpoint ck;
    ck.config_hash = config_hash(cfg);
    ck.add_network("teacher", teacher);
    opt.save(ck);
    ck.add_scalar("meta.iteration", static_cast<double>(iter));
    ck.add_u64("meta.rng_seed", cfg.train.seed);
    const std::string path = (fs::path(run_dir) / name).string();
    save_checkpoint(path, ck);
    return path;
  };

  StageResult result;
  for (int64_t iter = start_iter; iter < sched.max_iterations; ++iter) {
    const float lr = poly_lr(sched.base_lr, iter, sched.max_iterations, sched.power);
    Batch batch = stream.at(iter);
    double ce_v;
    {
      Tape tape;
      Features f = forward_features(teacher, batch.images, Mode::Train);
      Tensor ce = softmax_cross_entropy(f.logits, batch.labels);
      ce_v = ce.item();
      abort_if_diverged(ce_v, iter);
      tape.backward(ce);
    }
    opt.step(lr, sched.momentum, sched.weight_decay);
    opt.zero_grads();
    log_iteration(ctx.metrics, iter, lr, ce_v, 0.0, 0.0, ce_v);
    if ((iter + 1) % cfg.train.val_interval == 0)
      log_val(ctx.metrics, evaluate(teacher, ctx.val_set).report.mean);
    if ((iter + 1) % cfg.train.checkpoint_interval == 0 &&
        iter + 1 < sched.max_iterations)
      save(iter + 1, "ckpt_" + std::to_string(iter + 1) + ".ckpt");
  }
  result.final_val_miou = evaluate(teacher, ctx.val_set).report.mean;
  if (sched.max_iterations % cfg.train.val_interval != 0)
    log_val(ctx.metrics, result.final_val_miou);
  result.checkpoint_path = save(sched.max_iterations, "final.ckpt");
  return result;
}

StageResult train_autoencoder(const RunConfig& cfg, const std::string& run_dir) {
  RunContext ctx = open_run(cfg, run_dir);
  Network teacher = load_frozen_teacher(cfg);
  const uint64_t teacher_sum = frozen_checksum(teacher);

  TranslatorAE ae =
      build_translator(kTeacherChannels, derive_seed(cfg.train.seed, "translator"));
  SgdOptimizer opt;
  opt.add_network("encoder", ae.encoder);
  opt.add_network("decoder", ae.decoder);

  const Schedule& sched = cfg.ae;
  const int64_t iters_per_epoch =
      (static_cast<int64_t>(ctx.train_set.size()) + sched.batch_size - 1) /
      sched.batch_size;
  const int64_t max_iters = iters_per_epoch * cfg.ae_epochs;
  BatchStream stream(ctx.train_set, sched.batch_size, cfg.train.augment,
                     derive_seed(cfg.train.seed, "data:ae"));

  // Fixed un-augmented probe batch for progress measurements. The probe
  // runs with batch statistics (the measurement the optimizer sees), with
  // running stats snapshotted so probing never perturbs the model; the
  // untrained net's running stats are placeholder values, so an eval-mode
  // baseline would not measure the actual untrained reconstruction.
  BatchStream probe_stream(ctx.train_set, sched.batch_size, false,
                           derive_seed(cfg.train.seed, "probe"));
  const Batch probe = probe_stream.at(0);
  Tensor probe_phi = forward_features(teacher, probe.images, Mode::Eval).features;
  auto probe_stats = [&](double* mse_out, double* code_l1_out) {
    std::vector<Tensor> saved;
    for (Network* net : {&ae.encoder, &ae.decoder})
      for (auto& b : named_buffers(*net)) saved.push_back(b.tensor.clone());
    Tensor code = forward(ae.encoder, probe_phi, Mode::Train);
    Tensor recon = forward(ae.decoder, code, Mode::Train);
    size_t si = 0;
    for (Network* net : {&ae.encoder, &ae.decoder})
      for (auto& b : named_buffers(*net)) {
        std::copy(saved[si].data(), saved[si].data() + saved[si].numel(),
                  b.tensor.data());
        ++si;
      }
    double mse = 0.0, l1 = 0.0;
    for (int64_t i = 0; i < probe_phi.numel(); ++i) {
      const double d =
          static_cast<double>(probe_phi.data()[i]) - recon.data()[i];
      mse += d * d;
    }
    for (int64_t i = 0; i < code.numel(); ++i) l1 += std::fabs(code.data()[i]);
    *mse_out = mse / static_cast<double>(probe_phi.numel());
    *code_l1_out = l1 / static_cast<double>(code.numel());
  };

  StageResult result;
  double code_l1_start;
  probe_stats(&result.probe_mse_start, &code_l1_start);

  for (int64_t iter = 0; iter < max_iters; ++iter) {
    const float lr = sched.base_lr;  // stage 1 runs at a constant rate
    Batch batch = stream.at(iter);
    Tensor phi_t = forward_features(teacher, batch.images, Mode::Eval).features;
    double total_v;
    {
      Tape tape;
      Tensor loss = reconstruction_loss(phi_t, ae.encoder, ae.decoder,
                                        cfg.distill.alpha, Mode::Train);
      total_v = loss.item();
      abort_if_diverged(total_v, iter);
      tape.backward(loss);
    }
    opt.step(lr, sched.momentum, sched.weight_decay);
    opt.zero_grads();
    log_iteration(ctx.metrics, iter, lr, 0.0, 0.0, 0.0, total_v);
    if ((iter + 1) % cfg.train.checkpoint_interval == 0)
      verify_frozen(teacher, teacher_sum, "teacher");
  }
  verify_frozen(teacher, teacher_sum, "teacher");
  probe_stats(&result.probe_mse_end, &result.probe_code_l1_end);

  std::ofstream probe_log(fs::path(run_dir) / "probe.txt");
  probe_log << "probe_mse_start=" << result.probe_mse_start
            << " probe_mse_end=" << result.probe_mse_end
            << " probe_code_l1_end=" << result.probe_code_l1_end << "\n";

  Checkpoint ck;
  ck.config_hash = config_hash(cfg);
  ck.add_network("encoder", ae.encoder);
  ck.add_network("decoder", ae.decoder);
  opt.save(ck);
  ck.add_scalar("meta.iteration", static_cast<double>(max_iters));
  ck.add_u64("meta.rng_seed", cfg.train.seed);
  result.checkpoint_path = (fs::path(run_dir) / "final.ckpt").string();
  save_checkpoint(result.checkpoint_path, ck);
  return result;
}

StageResult distill_student(const RunConfig& cfg, const std::string& run_dir,
                            DistillMode mode, const std::string& resume_from) {
  RunContext ctx = open_run(cfg, run_dir);

  const float beta = mode == DistillMode::Full ? cfg.distill.beta : 0.0f;
  const float gamma =
      (mode == DistillMode::Full || mode == DistillMode::AffinityOnly)
          ? cfg.distill.gamma
          : 0.0f;
  const bool kd_on = mode == DistillMode::Kd;
  const bool fitnet_on = mode == DistillMode::FitNet;
  const bool translator_on = beta > 0.0f || gamma > 0.0f;
  const bool teacher_on = mode != DistillMode::Plain;

  Network teacher;
  uint64_t teacher_sum = 0;
  if (teacher_on) {
    teacher = load_frozen_teacher(cfg);
    teacher_sum = frozen_checksum(teacher);
  }
  TranslatorAE ae;
  uint64_t encoder_sum = 0;
  if (mode == DistillMode::Full || mode == DistillMode::AffinityOnly) {
    ae = load_frozen_translator(cfg);  // required even when beta == gamma == 0
    encoder_sum = frozen_checksum(ae.encoder);
  }
  if (translator_on)
    validate_grid_alignment(cfg.model.teacher_os, cfg.model.student_os,
                            cfg.data.image_size, cfg.data.image_size);

  Network student =
      build_network(SegArch::Student, cfg.model.student_os, cfg.data.num_classes,
                    derive_seed(cfg.train.seed, "student"));
  SgdOptimizer opt;
  opt.add_network("student", student);

  Network adapter_f, adapter_a;
  if (beta > 0.0f) {
    adapter_f = build_adapter("adapter_f", kStudentChannels, kTeacherChannels,
                              cfg.model.adapter_depth,
                              derive_seed(cfg.train.seed, "adapter_f"));
    opt.add_network("adapter_f", adapter_f);
  }
  if (gamma > 0.0f) {
    adapter_a = build_adapter("adapter_a", kStudentChannels, kTeacherChannels,
                              cfg.model.adapter_depth,
                              derive_seed(cfg.train.seed, "adapter_a"));
    opt.add_network("adapter_a", adapter_a);
  }
  Layer fitnet_proj;
  if (fitnet_on) {
    Rng proj_rng(derive_seed(cfg.train.seed, "fitnet_proj"));
    ConvSpec ps;
    ps.in_channels = kStudentChannels;
    ps.out_channels = kTeacherChannels;
    fitnet_proj = make_conv("fitnet_proj", ps, true, proj_rng);
    fitnet_proj.weight.set_requires_grad(true);
    fitnet_proj.bias.set_requires_grad(true);
    opt.slots().push_back({"fitnet_proj.weight", fitnet_proj.weight,
                           Tensor::zeros(fitnet_proj.weight.shape()), true});
    opt.slots().push_back({"fitnet_proj.bias", fitnet_proj.bias,
                           Tensor::zeros(fitnet_proj.bias.shape()), false});
  }

  int64_t start_iter = 0;
  if (!resume_from.empty()) {
    Checkpoint ck = load_checkpoint(resume_from);
    if (ck.config_hash != config_hash(cfg))
      throw ConfigError("resume refused: checkpoint was written under a "
                        "different configuration");
    ck.load_into("student", student);
    if (beta > 0.0f) ck.load_into("adapter_f", adapter_f);
    if (gamma > 0.0f) ck.load_into("adapter_a", adapter_a);
    if (fitnet_on) {
      const Tensor* w = ck.find("fitnet_proj.weight");
      const Tensor* b = ck.find("fitnet_proj.bias");
      if (!w || !b) throw IoError("checkpoint is missing the fitnet projection");
      std::copy(w->data(), w->data() + w->numel(), fitnet_proj.weight.data());
      std::copy(b->data(), b->data() + b->numel(), fitnet_proj.bias.data());
    }
    opt.load(ck);
    start_iter = static_cast<int64_t>(ck.scalar("meta.iteration"));
  }

  const Schedule& sched = cfg.student;
  BatchStream stream(ctx.train_set, sched.batch_size, cfg.train.augment,
                     derive_seed(cfg.train.seed, "data:student"));

  auto save = [&](int64_t iter, const std::string& name) {
    Checkpoint ck;
    ck.config_hash = config_hash(cfg);
    ck.add_network("student", student);
    if (beta > 0.0f) ck.add_network("adapter_f", adapter_f);
    if (gamma > 0.0f) ck.add_network("adapter_a", adapter_a);
    if (fitnet_on) {
      ck.add("fitnet_proj.weight", fitnet_proj.weight);
      ck.add("fitnet_proj.bias", fitnet_proj.bias);
    }
    opt.save(ck);
    ck.add_scalar("meta.iteration", static_cast<double>(iter));
    ck.add_u64("meta.rng_seed", cfg.train.seed);
    const std::string path = (fs::path(run_dir) / name).string();
    save_checkpoint(path, ck);
    return path;
  };

  StageResult result;
  for (int64_t iter = start_iter; iter < sched.max_iterations; ++iter) {
    const float lr = poly_lr(sched.base_lr, iter, sched.max_iterations, sched.power);
    Batch batch = stream.at(iter);

    Tensor phi_t, teacher_logits;
    if (teacher_on && (translator_on || kd_on || fitnet_on)) {
      Features ft = forward_features(teacher, batch.images, Mode::Eval);
      phi_t = ft.features;
      teacher_logits = ft.logits;
    }

    double ce_v, adapt_v = 0.0, aff_v = 0.0, total_v;
    {
      Tape tape;
      Features fsee = forward_features(student, batch.images, Mode::Train);
      Tensor ce = softmax_cross_entropy(fsee.logits, batch.labels);
      Tensor total;
      if (beta > 0.0f || gamma > 0.0f || kd_on || fitnet_on) {
        Tensor adapt = Tensor::scalar(0.0f);
        Tensor aff = Tensor::scalar(0.0f);
        DistillWeights w = cfg.distill;
        w.beta = beta;
        w.gamma = gamma;
        if (beta > 0.0f)
          adapt = adaptation_loss(fsee.features, phi_t, adapter_f, ae.encoder,
                                  cfg.distill.p, cfg.distill.q, Mode::Train);
        if (kd_on) {
          adapt = kd_soft_loss(fsee.logits, teacher_logits,
                               cfg.distill.temperature);
          w.beta = 1.0f;
        }
        if (fitnet_on) {
          adapt = fitnet_loss(fsee.features, phi_t, fitnet_proj);
          w.beta = 1.0f;
        }
        if (gamma > 0.0f)
          aff = affinity_loss(fsee.features, phi_t, adapter_a, ae.encoder,
                              Mode::Train);
        adapt_v = adapt.item();
        aff_v = aff.item();
        total = total_student_loss(ce, adapt, aff, w);
      } else {
        total = ce;
      }
      ce_v = ce.item();
      total_v = total.item();
      abort_if_diverged(total_v, iter);
      tape.backward(total);
    }
    opt.step(lr, sched.momentum, sched.weight_decay);
    opt.zero_grads();
    log_iteration(ctx.metrics, iter, lr, ce_v, adapt_v, aff_v, total_v);
    if ((iter + 1) % cfg.train.val_interval == 0)
      log_val(ctx.metrics, evaluate(student, ctx.val_set).report.mean);
    if ((iter + 1) % cfg.train.checkpoint_interval == 0) {
      if (teacher_on) verify_frozen(teacher, teacher_sum, "teacher");
      if (encoder_sum) verify_frozen(ae.encoder, encoder_sum, "encoder");
      if (iter + 1 < sched.max_iterations)
        save(iter + 1, "ckpt_" + std::to_string(iter + 1) + ".ckpt");
    }
  }
  if (teacher_on) verify_frozen(teacher, teacher_sum, "teacher");
  if (encoder_sum) verify_frozen(ae.encoder, encoder_sum, "encoder");
  result.final_val_miou = evaluate(student, ctx.val_set).report.mean;
  if (sched.max_iterations % cfg.train.val_interval != 0)
    log_val(ctx.metrics, result.final_val_miou);
  result.checkpoint_path = save(sched.max_iterations, "final.ckpt");
  return result;
}

}  // namespace kad
