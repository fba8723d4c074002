#include "featlens/config.hpp"

#include <fstream>
#include <sstream>

namespace featlens {

namespace {
std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}
}  // namespace

Config Config::load(const std::string& path) {
  std::ifstream f(path);
  check(bool(f), "config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_string(ss.str());
}

Config Config::from_string(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    check(eq != std::string::npos,
          "config: line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    check(!key.empty(), "config: empty key on line " + std::to_string(lineno));
    c.kv_[key] = trim(line.substr(eq + 1));
  }
  return c;
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

int Config::get_int(const std::string& key, int fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stoi(it->second);
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stod(it->second);
}

uint64_t Config::get_u64(const std::string& key, uint64_t fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stoull(it->second);
}

namespace {
RunConfig base_defaults() {
  RunConfig rc;

  rc.host_train.epochs = 3;
  rc.host_train.subset = 8000;

  rc.dataaug_train.epochs = 5;
  rc.dataaug_train.subset = 8000;

  rc.lens_train.epochs = 2;
  rc.lens_train.subset = 2500;
  rc.lens_train.loss = LossConfig{3, 0.2, LossMode::Tac};

  rc.scaling_lens_train = rc.lens_train;
  rc.scaling_lens_train.subset = 1500;

  rc.rotclf_train.epochs = 10;
  rc.rotclf_train.subset = 5000;
  rc.rotclf_train.initial_lr = 0.05;
  rc.rotclf_train.decay_period_epochs = 2;

  rc.xlayer_train.epochs = 3;
  rc.xlayer_train.subset = 5000;

  return rc;
}
}  // namespace

RunConfig RunConfig::defaults() { return from_config(Config::from_string("")); }

RunConfig RunConfig::from_config(const Config& c) {
  RunConfig rc = base_defaults();
  rc.seed = c.get_u64("seed", rc.seed);
  rc.data_dir = c.get("data.dir", rc.data_dir);
  rc.synth_train = c.get_int("data.synth_train", rc.synth_train);
  rc.synth_test = c.get_int("data.synth_test", rc.synth_test);

  rc.host.input_h = c.get_int("host.input_h", rc.host.input_h);
  rc.host.input_w = c.get_int("host.input_w", rc.host.input_w);
  rc.host.class_count = c.get_int("host.classes", rc.host.class_count);
  rc.host.bottleneck_n = c.get_int("host.n", rc.host.bottleneck_n);
  rc.host.stage_widths = {c.get_int("host.stem_width", rc.host.stage_widths[0]),
                          c.get_int("host.stage1_width", rc.host.stage_widths[1]),
                          c.get_int("host.stage2_width", rc.host.stage_widths[2])};

  auto fill = [&c](TrainConfig& t, const std::string& prefix) {
    t.epochs = c.get_int(prefix + ".epochs", t.epochs);
    t.batch_size = c.get_int(prefix + ".batch", t.batch_size);
    t.initial_lr = c.get_double(prefix + ".lr", t.initial_lr);
    t.lr_decay = c.get_double(prefix + ".lr_decay", t.lr_decay);
    t.decay_period_epochs = c.get_int(prefix + ".decay_period", t.decay_period_epochs);
    t.momentum = c.get_double(prefix + ".momentum", t.momentum);
    t.subset = c.get_int(prefix + ".subset", t.subset);
  };
  fill(rc.host_train, "host_train");
  fill(rc.dataaug_train, "dataaug");
  fill(rc.lens_train, "lens_train");
  fill(rc.scaling_lens_train, "scaling_lens");
  fill(rc.rotclf_train, "rotclf");
  fill(rc.xlayer_train, "xlayer");

  rc.lens_train.loss.k = c.get_int("loss.k", rc.lens_train.loss.k);
  rc.lens_train.loss.d1 = c.get_double("loss.d1", rc.lens_train.loss.d1);
  rc.scaling_lens_train.loss = rc.lens_train.loss;

  rc.lens_groups = c.get_int("lens.m", rc.lens_groups);

  rc.filter_lo_deg = c.get_double("eval.filter_lo", rc.filter_lo_deg);
  rc.filter_hi_deg = c.get_double("eval.filter_hi", rc.filter_hi_deg);
  rc.eval_images = c.get_int("eval.images", rc.eval_images);
  rc.corr_images = c.get_int("corr.images", rc.corr_images);

  // one master seed; each stage trains off its own derived stream
  rc.host_train.seed = Rng::derive(rc.seed, 1);
  rc.dataaug_train.seed = Rng::derive(rc.seed, 2);
  rc.lens_train.seed = Rng::derive(rc.seed, 3);
  rc.scaling_lens_train.seed = Rng::derive(rc.seed, 4);
  rc.rotclf_train.seed = Rng::derive(rc.seed, 5);
  rc.xlayer_train.seed = Rng::derive(rc.seed, 6);
  return rc;
}

}  // namespace featlens
