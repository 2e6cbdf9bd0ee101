#pragma once

#include "bags/trainer.hpp"

#include "json.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace bags {

/// Bad flags or flag combinations; reported with usage text and exit code 1.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Entry point of the `bags` tool. args[0] is the program name. Returns
/// 0 on success, 1 on usage errors, 2 on runtime failures.
int run_cli(const std::vector<std::string>& args);

/// Flat {flag name: value} form of a training configuration, as written to
/// config.json and accepted by `--config`.
nlohmann::json train_config_json(const TrainConfig& config, const std::string& data_dir);

struct MetricsRow {
  std::string id;
  double psnr = 0;  // +inf for identical images
  double ssim = 0;
};

struct Metrics {
  std::vector<MetricsRow> rows;
  double mean_psnr = 0;
  double mean_ssim = 0;
};

/// Compares every PNG in `renders` with the same-named PNG in `truth`.
/// Throws std::runtime_error when the two directories hold different ids.
Metrics evaluate_directories(const std::filesystem::path& renders, const std::filesystem::path& truth);

/// Infinite PSNR is written as the string "inf".
nlohmann::json metrics_to_json(const Metrics& metrics);
Metrics metrics_from_json(const nlohmann::json& json);

}  // namespace bags
