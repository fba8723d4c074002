#pragma once

#include <map>
#include <string>

#include "featlens/host_model.hpp"
#include "featlens/train.hpp"

namespace featlens {

// Line-oriented key=value configuration; '#' starts a comment.
class Config {
 public:
  static Config load(const std::string& path);
  static Config from_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

// Desk-scale run settings shared by the CLI and the acceptance suite.
struct RunConfig {
  uint64_t seed = 1;
  std::string data_dir;  // empty: FEATLENS_DATA_DIR or <out>/data
  int synth_train = 12000;
  int synth_test = 4000;

  HostConfig host;

  TrainConfig host_train;
  TrainConfig dataaug_train;
  TrainConfig lens_train;
  TrainConfig scaling_lens_train;
  TrainConfig rotclf_train;
  TrainConfig xlayer_train;

  int lens_groups = 4;

  double filter_lo_deg = 45.0;
  double filter_hi_deg = 315.0;
  int eval_images = 2000;
  int corr_images = 1000;

  static RunConfig defaults();
  static RunConfig from_config(const Config& c);
};

}  // namespace featlens
