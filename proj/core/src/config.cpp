#include "capt/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include "capt/error.hpp"

namespace capt {

namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Text inside `name(...)`, or nullopt when `v` does not have that form.
std::optional<std::string> call_arg(const std::string& v, const std::string& name) {
  if (v.size() < name.size() + 2 || v.compare(0, name.size() + 1, name + "(") != 0 || v.back() != ')') return std::nullopt;
  return trim(v.substr(name.size() + 1, v.size() - name.size() - 2));
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const fs::path&)> set;
  std::function<std::string(const RunConfig&)> get;
};

using Table = std::map<std::string, Field>;

const Table& fields() {
  static const Table table = [] {
    Table t;
    auto msize = [&t](const std::string& name, std::size_t EncoderConfig::*m) {
      t[name] = {[m, name](RunConfig& c, const std::string& v, const fs::path&) { c.model.*m = parse_size(name, v); },
                 [m](const RunConfig& c) { return std::to_string(c.model.*m); }};
    };
    auto mdouble = [&t](const std::string& name, double EncoderConfig::*m) {
      t[name] = {[m, name](RunConfig& c, const std::string& v, const fs::path&) { c.model.*m = parse_double(name, v); },
                 [m](const RunConfig& c) { return fmt_double(c.model.*m); }};
    };
    auto rsize = [&t](const std::string& name, std::size_t RunConfig::*m) {
      t[name] = {[m, name](RunConfig& c, const std::string& v, const fs::path&) { c.*m = parse_size(name, v); },
                 [m](const RunConfig& c) { return std::to_string(c.*m); }};
    };
    auto rdouble = [&t](const std::string& name, double RunConfig::*m) {
      t[name] = {[m, name](RunConfig& c, const std::string& v, const fs::path&) { c.*m = parse_double(name, v); },
                 [m](const RunConfig& c) { return fmt_double(c.*m); }};
    };
    auto rpath = [&t](const std::string& name, fs::path RunConfig::*m) {
      t[name] = {[m](RunConfig& c, const std::string& v, const fs::path& base) {
                   fs::path p(v);
                   c.*m = (p.empty() || p.is_absolute() || base.empty()) ? p : (base / p).lexically_normal();
                 },
                 [m](const RunConfig& c) { return (c.*m).string(); }};
    };

    msize("layers", &EncoderConfig::layers);
    msize("heads", &EncoderConfig::heads);
    msize("hidden", &EncoderConfig::hidden);
    msize("ffn_inner", &EncoderConfig::ffn_inner);
    msize("agg_inner", &EncoderConfig::agg_inner);
    msize("agg_out", &EncoderConfig::agg_out);
    mdouble("dropout", &EncoderConfig::dropout);
    msize("max_len", &EncoderConfig::max_len);
    msize("vocab_size", &EncoderConfig::vocab_size);
    msize("batch", &EncoderConfig::batch);
    msize("total_steps", &EncoderConfig::total_steps);
    msize("warmup_steps", &EncoderConfig::warmup_steps);
    mdouble("peak_lr", &EncoderConfig::peak_lr);
    mdouble("weight_decay", &EncoderConfig::weight_decay);
    mdouble("adam_eps", &EncoderConfig::adam_eps);
    mdouble("adam_beta1", &EncoderConfig::adam_beta1);
    mdouble("adam_beta2", &EncoderConfig::adam_beta2);
    mdouble("mask_rate", &EncoderConfig::mask_rate);
    msize("queue_capacity", &EncoderConfig::queue_capacity);
    t["temperature_mode"] = {
        [](RunConfig& c, const std::string& v, const fs::path&) {
          if (v == "adaptive") {
            c.model.temperature_mode = {true, c.model.temperature_mode.fixed};
          } else if (auto arg = call_arg(v, "fixed")) {
            c.model.temperature_mode = {false, parse_double("temperature_mode", *arg)};
          } else {
            throw ConfigError("temperature_mode: expected adaptive or fixed(<tau>), got '" + v + "'");
          }
        },
        [](const RunConfig& c) {
          const auto& m = c.model.temperature_mode;
          return m.adaptive ? std::string("adaptive") : "fixed(" + fmt_double(m.fixed) + ")";
        }};
    t["noise_kind"] = {
        [](RunConfig& c, const std::string& v, const fs::path&) {
          if (v == "mask") {
            c.model.noise_kind = NoiseKind::kMask;
          } else if (auto arg = call_arg(v, "shuffle")) {
            c.model.noise_kind = NoiseKind::kShuffle;
            c.model.shuffle_window = parse_size("noise_kind", *arg);
          } else {
            throw ConfigError("noise_kind: expected mask or shuffle(<k>), got '" + v + "'");
          }
        },
        [](const RunConfig& c) {
          return c.model.noise_kind == NoiseKind::kMask ? std::string("mask")
                                                        : "shuffle(" + std::to_string(c.model.shuffle_window) + ")";
        }};
    t["seed"] = {[](RunConfig& c, const std::string& v, const fs::path&) { c.model.seed = parse_size("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.model.seed); }};
    t["pooling"] = {[](RunConfig& c, const std::string& v, const fs::path&) {
                      if (v == "cls") {
                        c.model.pooling = Pooling::kCls;
                      } else if (v == "mean") {
                        c.model.pooling = Pooling::kMean;
                      } else {
                        throw ConfigError("pooling: expected cls or mean, got '" + v + "'");
                      }
                    },
                    [](const RunConfig& c) { return std::string(c.model.pooling == Pooling::kCls ? "cls" : "mean"); }};

    rpath("corpus", &RunConfig::corpus);
    rpath("vocab", &RunConfig::vocab);
    rpath("out_dir", &RunConfig::out_dir);
    rsize("checkpoint_interval", &RunConfig::checkpoint_interval);
    rdouble("capt_weight", &RunConfig::capt_weight);
    t["capt_average"] = {
        [](RunConfig& c, const std::string& v, const fs::path&) { c.capt_average = parse_bool("capt_average", v); },
        [](const RunConfig& c) { return std::string(c.capt_average ? "true" : "false"); }};
    rpath("probe_train", &RunConfig::probe_train);
    rpath("probe_train_labels", &RunConfig::probe_train_labels);
    rpath("probe_val", &RunConfig::probe_val);
    rpath("probe_val_labels", &RunConfig::probe_val_labels);
    rsize("finetune_steps", &RunConfig::finetune_steps);
    rdouble("finetune_lr", &RunConfig::finetune_lr);
    rsize("finetune_batch", &RunConfig::finetune_batch);
    rsize("eval_interval", &RunConfig::eval_interval);
    rsize("probe_seeds", &RunConfig::probe_seeds);
    rdouble("probe_threshold", &RunConfig::probe_threshold);
    return t;
  }();
  return table;
}

EncoderConfig preset(const std::string& name) {
  if (name == "desk") return EncoderConfig::desk();
  if (name == "capt_small") return EncoderConfig::capt_small();
  if (name == "capt_large") return EncoderConfig::capt_large();
  throw ConfigError("preset: expected desk, capt_small or capt_large, got '" + name + "'");
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (checkpoint_interval == 0) throw ConfigError("checkpoint_interval must be at least 1");
  if (!(capt_weight >= 0.0)) throw ConfigError("capt_weight must be non-negative");
  if (eval_interval == 0 || finetune_batch == 0) throw ConfigError("eval_interval and finetune_batch must be positive");
  if (!(finetune_lr >= 0.0)) throw ConfigError("finetune_lr must be non-negative");
  if (!(probe_threshold > 0.0 && probe_threshold <= 1.0)) throw ConfigError("probe_threshold must lie in (0, 1]");
}

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::vector<std::string> unknown;
  std::optional<std::string> preset_name;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key == "preset") {
      preset_name = value;
    } else if (!fields().count(key)) {
      unknown.push_back(key);
    } else {
      entries.emplace_back(std::move(key), std::move(value));
    }
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  RunConfig c;
  if (preset_name) c.model = preset(*preset_name);
  for (const auto& [k, v] : entries) {
    try {
      fields().at(k).set(c, v, base_dir);
    } catch (const ConfigError& e) {
      const std::string what = e.what();
      throw ConfigError(what.rfind(k, 0) == 0 ? what : k + ": " + what);
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path());
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(config) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys{"preset"};
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

}  // namespace capt
