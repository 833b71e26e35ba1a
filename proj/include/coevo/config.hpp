#pragma once

#include <string>

#include <json.hpp>

#include "coevo/coevolve.hpp"

namespace coevo {

// Run configuration file: exact key names mirror the config structs; unknown
// keys are rejected with an error naming the key, missing optional keys take
// the struct defaults.

struct RunConfig {
  CoevolutionConfig coevolution;
  std::string out_dir;
};

namespace config_detail {

inline void expect_keys(const nlohmann::json& obj,
                        std::initializer_list<const char*> allowed,
                        const std::string& context) {
  if (!obj.is_object()) raise(Errc::config_error, context + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* a : allowed) known = known || it.key() == a;
    if (!known)
      raise(Errc::config_error, "unknown key '" + it.key() + "' in " + context);
  }
}

template <typename T>
void read(const nlohmann::json& obj, const char* key, T& out) {
  if (obj.contains(key)) {
    try {
      out = obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      raise(Errc::config_error, std::string("bad value for '") + key + "'");
    }
  }
}

inline LlmConfig parse_llm(const nlohmann::json& j, const std::string& context) {
  expect_keys(j,
              {"endpoint", "model", "temperature", "prompt_template", "api_key_env",
               "runner_command", "transport_attempts", "backoff_base_ms"},
              context);
  LlmConfig c;
  read(j, "endpoint", c.endpoint);
  read(j, "model", c.model);
  read(j, "temperature", c.temperature);
  read(j, "prompt_template", c.prompt_template);
  read(j, "api_key_env", c.api_key_env);
  read(j, "runner_command", c.runner_command);
  read(j, "transport_attempts", c.transport_attempts);
  read(j, "backoff_base_ms", c.backoff_base_ms);
  return c;
}

inline DesignerConfig parse_designer(const nlohmann::json& j, const std::string& context) {
  expect_keys(
      j, {"mode", "candidates", "max_retries", "mutation_kinds", "signature_capacity", "llm"},
      context);
  DesignerConfig c;
  read(j, "mode", c.mode);
  read(j, "candidates", c.candidates);
  read(j, "max_retries", c.max_retries);
  read(j, "mutation_kinds", c.mutation_kinds);
  read(j, "signature_capacity", c.signature_capacity);
  if (j.contains("llm")) c.llm = parse_llm(j.at("llm"), context + ".llm");
  if (c.mode != "scripted" && c.mode != "llm")
    raise(Errc::config_error, context + ".mode must be scripted or llm");
  if (c.mode == "llm" && (c.llm.endpoint.empty() || c.llm.model.empty() ||
                          c.llm.prompt_template.empty()))
    raise(Errc::config_error,
          context + ": llm mode needs endpoint, model and prompt_template");
  return c;
}

inline InitialLevelConfig parse_initial_level(const nlohmann::json& j) {
  expect_keys(j,
              {"source", "path", "grid_size", "grid_doors", "nav_width", "nav_height",
               "nav_obstacles"},
              "initial_level");
  InitialLevelConfig c;
  read(j, "source", c.source);
  read(j, "path", c.path);
  read(j, "grid_size", c.grid_size);
  read(j, "grid_doors", c.grid_doors);
  read(j, "nav_width", c.nav_width);
  read(j, "nav_height", c.nav_height);
  read(j, "nav_obstacles", c.nav_obstacles);
  if (c.source != "generate" && c.source != "file")
    raise(Errc::config_error, "initial_level.source must be generate or file");
  if (c.source == "file" && c.path.empty())
    raise(Errc::config_error, "initial_level.path required for source=file");
  return c;
}

}  // namespace config_detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using namespace config_detail;
  expect_keys(j,
              {"family", "iterations", "candidates", "n_episodes", "selection_episodes",
               "run_seed", "gamma", "workers", "full_reevaluation", "policy_init", "out_dir",
               "initial_level", "policy_designer", "environment_designer"},
              "config");
  RunConfig rc;
  auto& c = rc.coevolution;
  read(j, "family", c.family);
  read(j, "iterations", c.iterations);
  read(j, "candidates", c.candidates);
  read(j, "n_episodes", c.n_episodes);
  read(j, "selection_episodes", c.selection_episodes);
  read(j, "run_seed", c.run_seed);
  read(j, "gamma", c.gamma);
  read(j, "workers", c.workers);
  read(j, "full_reevaluation", c.full_reevaluation);
  read(j, "policy_init", c.policy_init);
  read(j, "out_dir", rc.out_dir);
  if (j.contains("initial_level")) c.initial_level = parse_initial_level(j.at("initial_level"));
  if (j.contains("policy_designer"))
    c.policy_designer = parse_designer(j.at("policy_designer"), "policy_designer");
  if (j.contains("environment_designer"))
    c.environment_designer = parse_designer(j.at("environment_designer"), "environment_designer");

  if (c.family != "gridworld" && c.family != "nav2d")
    raise(Errc::config_error, "family must be gridworld or nav2d");
  if (c.iterations < 1) raise(Errc::config_error, "iterations must be >= 1");
  if (c.candidates < 1) raise(Errc::config_error, "candidates must be >= 1");
  if (c.n_episodes < 1) raise(Errc::config_error, "n_episodes must be >= 1");
  if (c.policy_init != "nash_best" && c.policy_init != "latest")
    raise(Errc::config_error, "policy_init must be nash_best or latest");
  return rc;
}

namespace config_detail {

inline nlohmann::json llm_json(const LlmConfig& c) {
  return {{"endpoint", c.endpoint},
          {"model", c.model},
          {"temperature", c.temperature},
          {"prompt_template", c.prompt_template},
          {"api_key_env", c.api_key_env},
          {"runner_command", c.runner_command},
          {"transport_attempts", c.transport_attempts},
          {"backoff_base_ms", c.backoff_base_ms}};
}

inline nlohmann::json designer_json(const DesignerConfig& c) {
  return {{"mode", c.mode},
          {"candidates", c.candidates},
          {"max_retries", c.max_retries},
          {"mutation_kinds", c.mutation_kinds},
          {"signature_capacity", c.signature_capacity},
          {"llm", llm_json(c.llm)}};
}

}  // namespace config_detail

// Fully resolved config echo; reparsing it reproduces the run.
inline nlohmann::json resolved_config_json(const RunConfig& rc) {
  const auto& c = rc.coevolution;
  return {{"family", c.family},
          {"iterations", c.iterations},
          {"candidates", c.candidates},
          {"n_episodes", c.n_episodes},
          {"selection_episodes", c.selection_episodes},
          {"run_seed", c.run_seed},
          {"gamma", c.gamma},
          {"workers", c.workers},
          {"full_reevaluation", c.full_reevaluation},
          {"policy_init", c.policy_init},
          {"out_dir", rc.out_dir},
          {"initial_level",
           {{"source", c.initial_level.source},
            {"path", c.initial_level.path},
            {"grid_size", c.initial_level.grid_size},
            {"grid_doors", c.initial_level.grid_doors},
            {"nav_width", c.initial_level.nav_width},
            {"nav_height", c.initial_level.nav_height},
            {"nav_obstacles", c.initial_level.nav_obstacles}}},
          {"policy_designer", config_detail::designer_json(c.policy_designer)},
          {"environment_designer", config_detail::designer_json(c.environment_designer)}};
}

}  // namespace coevo
