#include "dfnet/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dfnet {

namespace {

constexpr const char* kHeader = "dfnet-config v1";

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ValueError("config key " + key + ": cannot parse number '" + v + "'");
  }
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::int64_t x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ValueError("config key " + key + ": cannot parse integer '" + v + "'");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValueError("config key " + key + ": cannot parse boolean '" + v + "'");
}

std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, item));
  if (out.empty()) throw ValueError("config key " + key + ": empty list");
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt(const std::vector<double>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    os.precision(17);
    os << v[i];
  }
  return os.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, Field>& field_table() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    auto dbl = [&t](const std::string& key, double RunConfig::* member) {
      t[key] = {[member, key](RunConfig& c, const std::string&, const std::string& v) {
                  c.*member = parse_double(key, v);
                },
                [member](const RunConfig& c) { return fmt(c.*member); }};
    };
    auto integer = [&t](const std::string& key, int RunConfig::* member) {
      t[key] = {[member, key](RunConfig& c, const std::string&, const std::string& v) {
                  c.*member = static_cast<int>(parse_int(key, v));
                },
                [member](const RunConfig& c) { return std::to_string(c.*member); }};
    };
    auto boolean = [&t](const std::string& key, bool RunConfig::* member) {
      t[key] = {[member, key](RunConfig& c, const std::string&, const std::string& v) {
                  c.*member = parse_bool(key, v);
                },
                [member](const RunConfig& c) { return c.*member ? "true" : "false"; }};
    };
    auto u64 = [&t](const std::string& key, std::uint64_t RunConfig::* member) {
      t[key] = {[member, key](RunConfig& c, const std::string&, const std::string& v) {
                  c.*member = static_cast<std::uint64_t>(parse_int(key, v));
                },
                [member](const RunConfig& c) { return std::to_string(c.*member); }};
    };

    integer("model.base_width", &RunConfig::base_width);
    integer("model.channels", &RunConfig::channels);
    integer("model.k", &RunConfig::k);
    dbl("dfm.lambda", &RunConfig::lambda);
    boolean("head.bn_before_relu", &RunConfig::head_bn_before_relu);
    boolean("model.bn_frame_stats", &RunConfig::bn_frame_stats);
    u64("model.init_seed", &RunConfig::init_seed);

    boolean("crf.enabled", &RunConfig::crf_enabled);
    integer("crf.n_iters", &RunConfig::crf_n_iters);
    dbl("crf.w_appearance", &RunConfig::crf_w_appearance);
    dbl("crf.w_smoothness", &RunConfig::crf_w_smoothness);
    dbl("crf.theta_alpha", &RunConfig::crf_theta_alpha);
    dbl("crf.theta_beta", &RunConfig::crf_theta_beta);
    dbl("crf.theta_gamma", &RunConfig::crf_theta_gamma);
    boolean("crf.learn_compat", &RunConfig::crf_learn_compat);

    t["train.stage"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                          if (v != "static_pretrain" && v != "video" && v != "coseg")
                            throw ValueError("config key train.stage: unknown stage '" + v + "'");
                          c.train_stage = v;
                        },
                        [](const RunConfig& c) { return c.train_stage; }};
    dbl("train.base_lr", &RunConfig::base_lr);
    integer("train.batch_size", &RunConfig::batch_size);
    integer("train.max_iter", &RunConfig::max_iter);
    dbl("train.power", &RunConfig::power);
    dbl("train.weight_decay", &RunConfig::weight_decay);
    integer("train.n_workers", &RunConfig::n_workers);
    u64("train.seed", &RunConfig::seed);
    boolean("train.crf", &RunConfig::crf_in_training);
    boolean("train.clip_gradients", &RunConfig::clip_gradients);
    boolean("train.encoder_bn_frozen", &RunConfig::encoder_bn_frozen);
    dbl("train.clip_norm", &RunConfig::clip_norm);

    t["infer.scales"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                           c.scales = parse_double_list("infer.scales", v);
                         },
                         [](const RunConfig& c) { return fmt(c.scales); }};
    boolean("infer.mirror", &RunConfig::mirror);
    dbl("infer.threshold", &RunConfig::threshold);
    integer("infer.n_in", &RunConfig::n_in);
    boolean("infer.resize_before_average", &RunConfig::resize_before_average);
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  check_value(base_width >= 1, "model.base_width must be positive");
  check_value(channels >= 8, "model.channels must be at least 8");
  check_value(k >= 1, "model.k must be positive");
  check_value(lambda >= 0.0 && lambda <= 1.0, "dfm.lambda must lie in [0,1]");
  check_value(crf_n_iters >= 0, "crf.n_iters must be >= 0");
  check_value(crf_w_appearance >= 0.0 && crf_w_smoothness >= 0.0,
              "crf kernel weights must be >= 0");
  check_value(crf_theta_alpha > 0.0 && crf_theta_beta > 0.0 && crf_theta_gamma > 0.0,
              "crf bandwidths must be strictly positive");
  check_value(base_lr > 0.0, "train.base_lr must be positive");
  check_value(power > 0.0, "train.power must be positive");
  check_value(max_iter >= 0, "train.max_iter must be >= 0");
  check_value(batch_size >= 1, "train.batch_size must be positive");
  check_value(n_workers >= 1, "train.n_workers must be positive");
  check_value(threshold > 0.0 && threshold < 1.0, "infer.threshold must lie in (0,1)");
  check_value(n_in >= 1, "infer.n_in must be positive");
  for (double s : scales) check_value(s > 0.0, "infer.scales must be positive");
}

RunConfig parse_run_config(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kHeader)
    throw ValueError("config: missing '" + std::string(kHeader) + "' header");
  RunConfig cfg;
  const auto& table = field_table();
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw ValueError("config: malformed line '" + line + "'");
    const std::string key = line.substr(0, sp);
    const std::string value = line.substr(sp + 1);
    auto it = table.find(key);
    if (it == table.end()) throw ValueError("config: unknown key '" + key + "'");
    it->second.set(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return parse_run_config(os.str());
}

std::string format_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << kHeader << "\n";
  for (const auto& [key, field] : field_table()) os << key << " " << field.get(cfg) << "\n";
  return os.str();
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << format_run_config(cfg);
}

}  // namespace dfnet
