#include "crfp/run_config.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace crfp {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

long parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    long r = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not an integer: '" + v + "'");
  }
}

double parse_float(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not a number: '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "0" || v == "false") return false;
  if (v == "1" || v == "true") return true;
  throw ConfigError("config key " + key + ": not a boolean (0/1/true/false): '" + v + "'");
}

std::string fmt_float(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct KeySpec {
  const char* name;
  Setter set;
  Getter get;
};

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      {"crfp.scale",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.crfp.scale = static_cast<int>(parse_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.crfp.scale); }},
      {"crfp.base_channels",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.crfp.base_channels = static_cast<int>(parse_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.crfp.base_channels); }},
      {"crfp.hr_channels",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.crfp.hr_channels = static_cast<int>(parse_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.crfp.hr_channels); }},
      {"crfp.fovea_size",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.crfp.fovea_size = static_cast<int>(parse_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.crfp.fovea_size); }},
      {"crfp.pass_channels",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.crfp.pass_channels = static_cast<int>(parse_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.crfp.pass_channels); }},
      {"crfp.dsv_channels",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.crfp.dsv_channels = static_cast<int>(parse_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.crfp.dsv_channels); }},
      {"crfp.fast_region",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.crfp.fast_region = static_cast<int>(parse_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.crfp.fast_region); }},
      {"crfp.offset_range",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.crfp.offset_range = static_cast<float>(parse_float(k, v)); },
       [](const RunConfig& c) { return fmt_float(c.crfp.offset_range); }},
      {"crfp.charbonnier_eps",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.crfp.charbonnier_eps = static_cast<float>(parse_float(k, v)); },
       [](const RunConfig& c) { return fmt_float(c.crfp.charbonnier_eps); }},
      {"flow.channels",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.crfp.flow.channels = static_cast<int>(parse_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.crfp.flow.channels); }},
      {"flow.range",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.crfp.flow.flow_range = static_cast<float>(parse_float(k, v)); },
       [](const RunConfig& c) { return fmt_float(c.crfp.flow.flow_range); }},
      {"train.lr_model",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr_model = static_cast<float>(parse_float(k, v)); },
       [](const RunConfig& c) { return fmt_float(c.train.lr_model); }},
      {"train.lr_flow",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr_flow = static_cast<float>(parse_float(k, v)); },
       [](const RunConfig& c) { return fmt_float(c.train.lr_flow); }},
      {"train.batch",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.batch = static_cast<int>(parse_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.train.batch); }},
      {"train.iterations",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.iterations = static_cast<int>(parse_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.train.iterations); }},
      {"train.unroll",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.unroll = static_cast<int>(parse_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.train.unroll); }},
      {"train.seed",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = static_cast<uint64_t>(parse_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      {"train.checkpoint_every",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.checkpoint_every = static_cast<int>(parse_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.train.checkpoint_every); }},
      {"train.patch",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.patch = static_cast<int>(parse_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.train.patch); }},
      {"train.flow_pretrain",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.flow_pretrain = static_cast<int>(parse_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.train.flow_pretrain); }},
      {"data.train_dir",
       [](RunConfig& c, const std::string&, const std::string& v) { c.train_dir = v; },
       [](const RunConfig& c) { return c.train_dir; }},
      {"data.eval_dir",
       [](RunConfig& c, const std::string&, const std::string& v) { c.eval_dir = v; },
       [](const RunConfig& c) { return c.eval_dir; }},
      {"output.dir",
       [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; },
       [](const RunConfig& c) { return c.output_dir; }},
      {"trace.kind",
       [](RunConfig& c, const std::string&, const std::string& v) { c.trace_kind = v; },
       [](const RunConfig& c) { return c.trace_kind; }},
      {"trace.sigma",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.trace_sigma = parse_float(k, v); },
       [](const RunConfig& c) { return fmt_float(c.trace_sigma); }},
      {"trace.cy",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.trace_cy = static_cast<int>(parse_int(k, v)); },
       [](const RunConfig& c) { return std::to_string(c.trace_cy); }},
      {"eval.write_frames",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.write_frames = parse_bool(k, v); },
       [](const RunConfig& c) { return c.write_frames ? "1" : "0"; }},
  };
  return table;
}

const KeySpec* find_key(const std::string& name) {
  for (const auto& k : key_table())
    if (name == k.name) return &k;
  return nullptr;
}

}  // namespace

void RunConfig::validate() const {
  crfp.validate();
  if (train.lr_model <= 0.0f || train.lr_flow <= 0.0f)
    throw ConfigError("train.lr_model and train.lr_flow must be positive");
  if (train.lr_flow >= train.lr_model)
    throw ConfigError("train.lr_flow must be smaller than train.lr_model");
  if (train.batch < 1) throw ConfigError("train.batch must be >= 1");
  if (train.iterations < 0) throw ConfigError("train.iterations must be >= 0");
  if (train.unroll < 1) throw ConfigError("train.unroll must be >= 1");
  if (train.checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
  if (train.patch < 0) throw ConfigError("train.patch must be >= 0");
  if (train.patch > 0) {
    if (train.patch % 8 != 0) throw ConfigError("train.patch must be divisible by 8");
    if (crfp.fovea_size > train.patch)
      throw ConfigError("crfp.fovea_size must not exceed train.patch");
  }
  if (train.flow_pretrain < 0) throw ConfigError("train.flow_pretrain must be >= 0");
  if (trace_kind != "raster" && trace_kind != "horizontal" && trace_kind != "tracker")
    throw ConfigError("trace.kind must be raster, horizontal, or tracker");
  if (trace_sigma < 0.0) throw ConfigError("trace.sigma must be >= 0");
  if (trace_sigma != 0.0 && trace_kind != "tracker")
    throw ConfigError("trace.sigma requires trace.kind = tracker");
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  if (const char* root = std::getenv("CRFP_OUTPUT_ROOT")) cfg.output_dir = root;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::vector<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    const KeySpec* spec = find_key(key);
    if (!spec)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown configuration key: " + key);
    if (std::find(seen.begin(), seen.end(), key) != seen.end())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate configuration key: " + key);
    seen.push_back(key);
    spec->set(cfg, key, value);
  }
  cfg.explicit_keys = std::move(seen);
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_config_text(text, path);
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : key_table()) {
    out += k.name;
    out += " = ";
    out += k.get(cfg);
    out += '\n';
  }
  return out;
}

}  // namespace crfp
