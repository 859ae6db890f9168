#include "kad/config.hpp"

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace kad {

void Schedule::validate(const std::string& stage) const {
  if (base_lr <= 0)
    throw ConfigError(stage + ".base_lr must be positive");
  if (power <= 0)
    throw ConfigError(stage + ".power must be positive");
  if (batch_size < 2)
    throw ConfigError(stage + ".batch_size must be >= 2 (batch statistics)");
  if (max_iterations < 1)
    throw ConfigError(stage + ".max_iterations must be >= 1");
  if (momentum < 0 || momentum >= 1)
    throw ConfigError(stage + ".momentum must lie in [0,1)");
  if (weight_decay < 0)
    throw ConfigError(stage + ".weight_decay must be non-negative");
}

void RunConfig::validate() const {
  teacher.validate("teacher");
  ae.validate("ae");
  student.validate("student");
  distill.validate();
  if (ae_epochs < 1) throw ConfigError("ae.epochs must be >= 1");
  if (model.adapter_depth != 1 && model.adapter_depth != 3)
    throw ConfigError("model.adapter_depth must be 1 or 3");
  if (data.image_size % 32 != 0)
    throw ConfigError("data.image_size must be divisible by 32");
  if (train.threads < 1) throw ConfigError("train.threads must be >= 1");
  if (train.val_interval < 1 || train.checkpoint_interval < 1)
    throw ConfigError("train intervals must be >= 1");
}

namespace {

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::string fmt_int(int64_t v) { return std::to_string(v); }

std::string fmt_u64(uint64_t v) { return std::to_string(v); }

std::string fmt_float(float v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

int parse_int(const std::string& s) {
  size_t pos = 0;
  const int v = std::stoi(s, &pos);
  if (pos != s.size()) throw std::invalid_argument(s);
  return v;
}

uint64_t parse_u64(const std::string& s) {
  size_t pos = 0;
  const unsigned long long v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument(s);
  return v;
}

float parse_float(const std::string& s) {
  size_t pos = 0;
  const float v = std::stof(s, &pos);
  if (pos != s.size()) throw std::invalid_argument(s);
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument(s);
}

#define INT_FIELD(key, expr)                                                  \
  {key,                                                                       \
   {[](const RunConfig& c) { return fmt_int(c.expr); },                       \
    [](RunConfig& c, const std::string& v) { c.expr = parse_int(v); }}}
#define U64_FIELD(key, expr)                                                  \
  {key,                                                                       \
   {[](const RunConfig& c) { return fmt_u64(c.expr); },                       \
    [](RunConfig& c, const std::string& v) { c.expr = parse_u64(v); }}}
#define FLOAT_FIELD(key, expr)                                                \
  {key,                                                                       \
   {[](const RunConfig& c) { return fmt_float(c.expr); },                     \
    [](RunConfig& c, const std::string& v) { c.expr = parse_float(v); }}}
#define BOOL_FIELD(key, expr)                                                 \
  {key,                                                                       \
   {[](const RunConfig& c) { return c.expr ? "true" : "false"; },             \
    [](RunConfig& c, const std::string& v) { c.expr = parse_bool(v); }}}
#define STRING_FIELD(key, expr)                                               \
  {key,                                                                       \
   {[](const RunConfig& c) { return c.expr; },                                \
    [](RunConfig& c, const std::string& v) { c.expr = v; }}}

// Declaration order is the canonical serialization order.
const std::vector<std::pair<std::string, Field>>& schema() {
  static const std::vector<std::pair<std::string, Field>> s{
      INT_FIELD("data.num_train", data.num_train),
      INT_FIELD("data.num_val", data.num_val),
      INT_FIELD("data.image_size", data.image_size),
      INT_FIELD("data.num_classes", data.num_classes),
      INT_FIELD("data.min_shapes", data.min_shapes),
      INT_FIELD("data.max_shapes", data.max_shapes),
      FLOAT_FIELD("data.noise", data.noise),
      U64_FIELD("data.seed", data.seed),
      INT_FIELD("model.teacher_os", model.teacher_os),
      INT_FIELD("model.student_os", model.student_os),
      INT_FIELD("model.adapter_depth", model.adapter_depth),
      FLOAT_FIELD("distill.alpha", distill.alpha),
      FLOAT_FIELD("distill.beta", distill.beta),
      FLOAT_FIELD("distill.gamma", distill.gamma),
      INT_FIELD("distill.p", distill.p),
      INT_FIELD("distill.q", distill.q),
      FLOAT_FIELD("distill.temperature", distill.temperature),
      FLOAT_FIELD("teacher.base_lr", teacher.base_lr),
      INT_FIELD("teacher.max_iterations", teacher.max_iterations),
      FLOAT_FIELD("teacher.power", teacher.power),
      INT_FIELD("teacher.batch_size", teacher.batch_size),
      FLOAT_FIELD("teacher.momentum", teacher.momentum),
      FLOAT_FIELD("teacher.weight_decay", teacher.weight_decay),
      FLOAT_FIELD("ae.base_lr", ae.base_lr),
      INT_FIELD("ae.epochs", ae_epochs),
      INT_FIELD("ae.batch_size", ae.batch_size),
      FLOAT_FIELD("ae.momentum", ae.momentum),
      FLOAT_FIELD("ae.weight_decay", ae.weight_decay),
      FLOAT_FIELD("student.base_lr", student.base_lr),
      INT_FIELD("student.max_iterations", student.max_iterations),
      FLOAT_FIELD("student.power", student.power),
      INT_FIELD("student.batch_size", student.batch_size),
      FLOAT_FIELD("student.momentum", student.momentum),
      FLOAT_FIELD("student.weight_decay", student.weight_decay),
      U64_FIELD("train.seed", train.seed),
      INT_FIELD("train.threads", train.threads),
      INT_FIELD("train.val_interval", train.val_interval),
      INT_FIELD("train.checkpoint_interval", train.checkpoint_interval),
      BOOL_FIELD("train.augment", train.augment),
      STRING_FIELD("paths.data_dir", paths.data_dir),
      STRING_FIELD("paths.teacher_checkpoint", paths.teacher_checkpoint),
      STRING_FIELD("paths.ae_checkpoint", paths.ae_checkpoint),
  };
  return s;
}

const Field* find_field(const std::string& key) {
  for (const auto& [k, f] : schema())
    if (k == key) return &f;
  return nullptr;
}

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

void apply_assignment(RunConfig& cfg, const std::string& key,
                      const std::string& value, const std::string& where) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError(where + ": unknown key '" + key + "'");
  try {
    f->set(cfg, value);
  } catch (const std::exception&) {
    throw ConfigError(where + ": cannot parse value '" + value + "' for key '" +
                      key + "'");
  }
}

}  // namespace

RunConfig parse_config_text(const std::string& text,
                            const std::vector<std::string>& overrides,
                            const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos)
      throw ConfigError(where + ": expected 'section.key = value', got '" +
                        line + "'");
    apply_assignment(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)),
                     where);
  }
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override '" + ov + "' is not of the form key=value");
    apply_assignment(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)),
                     "override '" + ov + "'");
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config(const std::string& path,
                       const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), overrides, path);
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& [key, field] : schema())
    os << key << " = " << field.get(cfg) << "\n";
  return os.str();
}

uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t config_hash(const RunConfig& cfg) {
  const std::string s = serialize_config(cfg);
  return fnv1a64(s.data(), s.size());
}

}  // namespace kad
