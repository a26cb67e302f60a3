#include "evformer/config_file.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace evf {

namespace {

[[noreturn]] void fail(int line, const std::string& what) {
  throw std::invalid_argument("config line " + std::to_string(line) + ": " + what);
}

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

long long to_ll(const std::string& v, const std::string& key, int line) {
  size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) fail(line, "'" + key + "' needs an integer, got '" + v + "'");
  return out;
}

int to_int(const std::string& v, const std::string& key, int line) {
  return int(to_ll(v, key, line));
}

double to_double(const std::string& v, const std::string& key, int line) {
  size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) fail(line, "'" + key + "' needs a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v, const std::string& key, int line) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(line, "'" + key + "' needs true or false, got '" + v + "'");
}

bool set_model(ModelConfig& m, const std::string& key, const std::string& v, int line) {
  if (key == "width") m.width = to_int(v, key, line);
  else if (key == "height") m.height = to_int(v, key, line);
  else if (key == "time_steps") m.time_steps = to_int(v, key, line);
  else if (key == "kernel_size") m.kernel_size = to_int(v, key, line);
  else if (key == "out_channels") m.out_channels = to_int(v, key, line);
  else if (key == "patch_size") m.patch_size = to_int(v, key, line);
  else if (key == "embed_dim") m.embed_dim = to_int(v, key, line);
  else if (key == "heads") m.heads = to_int(v, key, line);
  else if (key == "blocks") m.blocks = to_int(v, key, line);
  else if (key == "mlp_ratio") m.mlp_ratio = to_int(v, key, line);
  else if (key == "classes") m.classes = to_int(v, key, line);
  else if (key == "attn_scale") m.attn_scale = to_double(v, key, line);
  else if (key == "lif_tau") m.lif_tau = to_double(v, key, line);
  else if (key == "lif_v_threshold") m.lif_v_threshold = to_double(v, key, line);
  else if (key == "lif_v_reset") m.lif_v_reset = to_double(v, key, line);
  else if (key == "lif_alpha") m.lif_alpha = to_double(v, key, line);
  else if (key == "temperature_init") m.temperature_init = to_double(v, key, line);
  else if (key == "fc_hidden") m.fc_hidden = to_int(v, key, line);
  else if (key == "normalize_input") m.normalize_input = to_bool(v, key, line);
  else if (key == "normalize_layers") m.normalize_layers = to_bool(v, key, line);
  else if (key == "variant") m.variant = parse_variant(v);
  else if (key == "classifier") m.classifier = parse_classifier(v);
  else return false;
  return true;
}

bool set_train(TrainConfig& t, const std::string& key, const std::string& v, int line) {
  if (key == "epochs") t.epochs = to_int(v, key, line);
  else if (key == "batch_size") t.batch_size = to_int(v, key, line);
  else if (key == "lr") t.lr = to_double(v, key, line);
  else if (key == "optimizer") t.optimizer = v;
  else if (key == "seed") t.seed = uint64_t(to_ll(v, key, line));
  else if (key == "threads") t.threads = to_int(v, key, line);
  else if (key == "stop_at_train_accuracy") t.stop_at_train_accuracy = to_double(v, key, line);
  else if (key == "checkpoint_path") t.checkpoint_path = v;
  else if (key == "metrics_path") t.metrics_path = v;
  else if (key == "confusion_path") t.confusion_path = v;
  else return false;
  return true;
}

bool set_data(DataOptions& d, const std::string& key, const std::string& v, int line) {
  if (key == "source") {
    if (v != "synthetic" && v != "dir") fail(line, "'source' must be synthetic or dir");
    d.source = v;
  } else if (key == "dir") d.dir = v;
  else if (key == "per_class") d.per_class = to_int(v, key, line);
  else if (key == "seed") d.seed = uint64_t(to_ll(v, key, line));
  else if (key == "train_split") d.train_split = to_double(v, key, line);
  else if (key == "duration_us") d.duration_us = uint32_t(to_ll(v, key, line));
  else if (key == "event_rate") d.event_rate = to_double(v, key, line);
  else if (key == "noise_rate") d.noise_rate = to_double(v, key, line);
  else return false;
  return true;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig out;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const size_t hash = raw.find_first_of("#;");
    if (hash != std::string::npos) raw.erase(hash);
    const std::string s = trim(raw);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail(line, "unterminated section header '" + s + "'");
      section = trim(s.substr(1, s.size() - 2));
      if (section != "model" && section != "train" && section != "data") {
        fail(line, "unknown section '" + section + "'");
      }
      continue;
    }
    const size_t eq = s.find('=');
    if (eq == std::string::npos) fail(line, "expected key = value, got '" + s + "'");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty()) fail(line, "empty key");
    if (section.empty()) fail(line, "key '" + key + "' appears before any section");
    bool known = false;
    if (section == "model") known = set_model(out.model, key, value, line);
    else if (section == "train") known = set_train(out.train, key, value, line);
    else known = set_data(out.data, key, value, line);
    if (!known) fail(line, "unknown key '" + key + "' in section [" + section + "]");
  }
  return out;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

}  // namespace evf
