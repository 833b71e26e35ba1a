// Example external policy speaking the line protocol, with failure-injection
// modes used by the test suite.
//
//   policy_stub noop            always act 0 / [0,0]
//   policy_stub solve-nav       head straight for the goal zone center
//   policy_stub crash-at N      exit(3) when asked for step N
//   policy_stub sleep MS        sleep MS milliseconds before every reply
//   policy_stub garbage         reply with non-JSON junk
//   policy_stub bad-ready       send junk instead of the ready message
//   policy_stub exit            exit immediately without speaking
//   policy_stub oob             reply with an out-of-range action

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

#include <json.hpp>

using nlohmann::json;

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "noop";
  const long arg = argc > 2 ? std::atol(argv[2]) : 0;

  if (mode == "exit") return 0;

  std::string line;
  if (!std::getline(std::cin, line)) return 1;
  const json init = json::parse(line, nullptr, false);
  const std::string family =
      init.is_object() && init.contains("family") ? init["family"].get<std::string>() : "";
  double speed = 5.0;
  if (init.is_object() && init.contains("action_spec") && init["action_spec"].contains("speed"))
    speed = init["action_spec"]["speed"].get<double>();

  if (mode == "bad-ready") {
    std::cout << "hello there\n" << std::flush;
    return 0;
  }
  std::cout << json{{"ready", true}}.dump() << "\n" << std::flush;

  while (std::getline(std::cin, line)) {
    const json msg = json::parse(line, nullptr, false);
    if (msg.is_discarded() || !msg.is_object()) return 1;
    if (msg.contains("done")) return 0;
    if (!msg.contains("step")) continue;
    const long step = msg["step"].get<long>();

    if (mode == "crash-at" && step >= arg) return 3;
    if (mode == "sleep") std::this_thread::sleep_for(std::chrono::milliseconds(arg));
    if (mode == "garbage") {
      std::cout << "%%%% not json at all\n" << std::flush;
      continue;
    }

    json action;
    if (family == "gridworld") {
      action = mode == "oob" ? json(17) : json(0);
    } else {
      if (mode == "solve-nav") {
        const auto& obs = msg["observation"];
        const double ax = obs["agent_pos"][0].get<double>();
        const double ay = obs["agent_pos"][1].get<double>();
        double gx = ax, gy = ay;
        for (const auto& o : obs["objects"]) {
          if (o.contains("purpose") && o["purpose"] == "goal") {
            gx = o["pos"][0].get<double>();
            gy = o["pos"][1].get<double>();
          }
        }
        const double dx = gx - ax, dy = gy - ay;
        const double n = std::hypot(dx, dy);
        action = n < 1e-9 ? json::array({0.0, 0.0})
                          : json::array({dx / std::max(n, speed), dy / std::max(n, speed)});
      } else if (mode == "oob") {
        action = json::array({4.0, 0.0});
      } else {
        action = json::array({0.0, 0.0});
      }
    }
    std::cout << json{{"action", action}}.dump() << "\n" << std::flush;
  }
  return 0;
}
