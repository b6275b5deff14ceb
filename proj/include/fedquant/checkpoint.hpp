#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "fedquant/federation.hpp"

namespace fedquant {

// Checkpoint container, JSON encoded:
//
//   {
//     "magic": "FEDQUANT-CHECKPOINT",
//     "version": 1,
//     "config_hash": "<16 hex digits>",
//     "config": { ...effective experiment config... },
//     "round": <int>,
//     "params": [ {"weight": <tensor>, "bias": <tensor>}, ... ],
//     "adam_m": null | <params>,
//     "adam_v": null | <params>,
//     "step_tables": {"weights": [<table>...], "acts": [<table>...]}
//   }
//
// <tensor> is {"shape": [..], "data": [..]}; <table> is
// {"anchor_bits": b, "signed": bool, "steps": {"<bits>": step, ...}} or null
// for an unused slot. Doubles are written with 17 significant digits, so a
// save/load cycle is exact.
inline constexpr const char* kCheckpointMagic = "FEDQUANT-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ServerState state;
  std::string config_hash;
  nlohmann::json config;
};

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& doc);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fedquant
