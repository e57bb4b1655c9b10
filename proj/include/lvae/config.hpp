#pragma once

#include <map>
#include <string>

#include "lvae/trainer.hpp"

namespace lvae {

// Run configuration files are plain key=value lines ('#' starts a comment).
// Unknown keys are rejected so typos fail loudly.

TrainConfig parse_train_config(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> read_config_file(const std::string& path);
// Resolved (defaults filled in) configuration, echoable back to a file.
std::string render_train_config(const TrainConfig& cfg);

}  // namespace lvae
