#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedquant/data.hpp"
#include "fedquant/evaluation.hpp"
#include "fedquant/federation.hpp"
#include "fedquant/strategies.hpp"

namespace fedquant {

inline constexpr int kConfigSchemaVersion = 1;

struct DataConfig {
  SyntheticParams synthetic;
  double alpha = 1.0;
  std::optional<std::string> train_csv;       // overrides synthetic generation when set
  std::optional<std::string> validation_csv;  // optional held-out CSV
};

// One declarative experiment document. See configs/ for examples.
struct ExperimentConfig {
  DataConfig data;
  std::vector<std::size_t> hidden{64};
  FedConfig fed;
  StrategyConfig strategy;
  std::vector<BitConfig> eval_bits = default_bit_configs();
  EvalOptions eval_options;
  std::string out_dir = "out";

  nlohmann::json effective;  // merged document after overrides
  std::string hash;          // FNV-1a of effective.dump()

  std::vector<std::size_t> widths(std::size_t input_dim, std::size_t num_classes) const;
};

// Complete document holding every key with its default value.
nlohmann::json default_config_json();

// Merge `user` over the defaults (unknown keys rejected), then apply
// `key.path=value` overrides. `env_seed` is used only when neither the user
// document nor an override sets "seed".
ExperimentConfig parse_config(const nlohmann::json& user, const std::vector<std::string>& overrides = {},
                              std::optional<std::uint64_t> env_seed = std::nullopt);
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {},
                             std::optional<std::uint64_t> env_seed = std::nullopt);

std::string fnv1a_hex(const std::string& text);

// Train/validation data plus the client partition described by the config.
FederatedDataset build_dataset(const ExperimentConfig& cfg);

}  // namespace fedquant
