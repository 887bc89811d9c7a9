#include "drst/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "drst/errors.hpp"

namespace drst {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  long x = std::strtol(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0')
    throw ParameterError("config key " + key + " wants an integer, got '" + v + "'");
  return (int)x;
}

unsigned long long parse_u64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0')
    throw ParameterError("config key " + key + " wants an unsigned integer, got '" + v + "'");
  return x;
}

float parse_float(const std::string& key, const std::string& v) {
  char* end = nullptr;
  float x = std::strtof(v.c_str(), &end);
  if (v.empty() || *end != '\0')
    throw ParameterError("config key " + key + " wants a number, got '" + v + "'");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ParameterError("config key " + key + " wants on/off, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::string cur;
  std::stringstream ss(v);
  while (std::getline(ss, cur, ',')) out.push_back(parse_int(key, trim(cur)));
  if (out.empty()) throw ParameterError("config key " + key + " wants a list");
  return out;
}

std::string fmt_float(float x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", (double)x);
  return buf;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "modality") modality = value;
  else if (key == "classes") classes = parse_int(key, value);
  else if (key == "frames") frames = parse_int(key, value);
  else if (key == "side") side = parse_int(key, value);
  else if (key == "d") d = parse_int(key, value);
  else if (key == "dsn_layers") dsn_layers = parse_int(key, value);
  else if (key == "width_mult") width_mult = parse_float(key, value);
  else if (key == "dtn_depth") dtn_depth = parse_int(key, value);
  else if (key == "heads") heads = parse_int(key, value);
  else if (key == "knn_k") knn_k = parse_int(key, value);
  else if (key == "mlp_ratio") mlp_ratio = parse_int(key, value);
  else if (key == "branch_lengths") branch_lengths = parse_int_list(key, value);
  else if (key == "window_span") window_span = parse_int(key, value);
  else if (key == "morph_k") morph_k = parse_int(key, value);
  else if (key == "lambda") lambda = parse_float(key, value);
  else if (key == "distill_temp") distill_temp = parse_float(key, value);
  else if (key == "rcm") rcm = parse_bool(key, value);
  else if (key == "gamma") gamma = parse_float(key, value);
  else if (key == "lr") lr = parse_float(key, value);
  else if (key == "momentum") momentum = parse_float(key, value);
  else if (key == "weight_decay") weight_decay = parse_float(key, value);
  else if (key == "warmup_epochs") warmup_epochs = parse_int(key, value);
  else if (key == "epochs") epochs = parse_int(key, value);
  else if (key == "batch") batch = parse_int(key, value);
  else if (key == "seed") seed = parse_u64(key, value);
  else if (key == "tau_start") tau_start = parse_float(key, value);
  else if (key == "tau_end") tau_end = parse_float(key, value);
  else if (key == "data") data = value;
  else if (key == "eval_data") eval_data = value;
  else if (key == "out") out = value;
  else throw ParameterError("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  if (modality != "rgb" && modality != "depth" && modality != "rgbd")
    throw ParameterError("modality must be rgb, depth or rgbd");
  if (side < (1 << dsn_layers))
    throw ParameterError("side too small for " + std::to_string(dsn_layers) +
                         " spatial layers");
  if (gamma < 0.0f || gamma > 1.0f) throw ParameterError("gamma must lie in [0, 1]");
  if (lr <= 0.0f) throw ParameterError("lr must be positive");
  if (momentum < 0.0f || momentum >= 1.0f) throw ParameterError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0f) throw ParameterError("weight decay must be nonnegative");
  if (warmup_epochs < 0) throw ParameterError("warmup epochs must be nonnegative");
  if (epochs < 1) throw ParameterError("need at least one epoch");
  if (warmup_epochs >= epochs) throw ParameterError("warmup must end before the last epoch");
  if (batch < 1) throw ParameterError("batch must be positive");
  if (tau_start <= 0.0f || tau_end <= 0.0f) throw ParameterError("tau must stay positive");
  to_model().validate();
}

ModelConfig RunConfig::to_model() const {
  ModelConfig m;
  m.classes = classes;
  m.frames = frames;
  m.d = d;
  m.dsn_layers = dsn_layers;
  m.width_mult = width_mult;
  m.dtn.lengths = branch_lengths;
  m.dtn.depth = dtn_depth;
  m.dtn.heads = heads;
  m.dtn.knn_k = knn_k;
  m.dtn.mlp_ratio = mlp_ratio;
  m.window_span = window_span;
  m.morph_k = morph_k;
  m.lambda_amp = lambda;
  m.distill_temp = distill_temp;
  m.recouple = rcm;
  return m;
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParameterError("config line " + std::to_string(lineno) +
                           " is not 'key = value': '" + line + "'");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open config " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const RunConfig& c) {
  std::ostringstream o;
  o << "modality = " << c.modality << "\n";
  o << "classes = " << c.classes << "\n";
  o << "frames = " << c.frames << "\n";
  o << "side = " << c.side << "\n";
  o << "d = " << c.d << "\n";
  o << "dsn_layers = " << c.dsn_layers << "\n";
  o << "width_mult = " << fmt_float(c.width_mult) << "\n";
  o << "dtn_depth = " << c.dtn_depth << "\n";
  o << "heads = " << c.heads << "\n";
  o << "knn_k = " << c.knn_k << "\n";
  o << "mlp_ratio = " << c.mlp_ratio << "\n";
  o << "branch_lengths = ";
  for (std::size_t i = 0; i < c.branch_lengths.size(); ++i)
    o << (i ? "," : "") << c.branch_lengths[i];
  o << "\n";
  o << "window_span = " << c.window_span << "\n";
  o << "morph_k = " << c.morph_k << "\n";
  o << "lambda = " << fmt_float(c.lambda) << "\n";
  o << "distill_temp = " << fmt_float(c.distill_temp) << "\n";
  o << "rcm = " << (c.rcm ? "on" : "off") << "\n";
  o << "gamma = " << fmt_float(c.gamma) << "\n";
  o << "lr = " << fmt_float(c.lr) << "\n";
  o << "momentum = " << fmt_float(c.momentum) << "\n";
  o << "weight_decay = " << fmt_float(c.weight_decay) << "\n";
  o << "warmup_epochs = " << c.warmup_epochs << "\n";
  o << "epochs = " << c.epochs << "\n";
  o << "batch = " << c.batch << "\n";
  o << "seed = " << c.seed << "\n";
  o << "tau_start = " << fmt_float(c.tau_start) << "\n";
  o << "tau_end = " << fmt_float(c.tau_end) << "\n";
  o << "data = " << c.data << "\n";
  o << "eval_data = " << c.eval_data << "\n";
  o << "out = " << c.out << "\n";
  return o.str();
}

}  // namespace drst
