#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "btlab/bridge.hpp"
#include "btlab/errors.hpp"
#include "btlab/repl.hpp"
#include "json.hpp"

#ifndef BTLAB_DATA_DIR
#define BTLAB_DATA_DIR "data"
#endif

using namespace btlab;

int main(int argc, char** argv) {
  CLI::App app{"btlab — Bluetooth firmware patching and link-layer lab"};

  std::string profile_path = std::string(BTLAB_DATA_DIR) +
                             "/profiles/bcm4339.json";
  std::string victim_profile_path;
  std::string transport = "sim";
  std::string host = "127.0.0.1";
  uint16_t snoop_port = 8872;
  uint16_t inject_port = 8873;
  bool serve = false;
  std::string script_path;
  std::string seed_text = "0x1337";
  std::string history_path;
  std::string victim_mac_text = "de:ad:be:ef:00:00";
  std::string mac_text;
  std::string config_path;

  app.add_option("--config", config_path,
                 "session config JSON (profile, transport, ports); "
                 "flags override it");
  app.add_option("--profile", profile_path, "controller profile JSON");
  app.add_option("--victim-profile", victim_profile_path,
                 "profile for the simulated peer (default: same as --profile)");
  app.add_option("--victim-mac", victim_mac_text,
                 "MAC address of the simulated peer");
  app.add_option("--mac", mac_text, "own MAC address override");
  app.add_option("--transport", transport, "sim | bridge")
      ->check(CLI::IsMember({"sim", "bridge"}));
  app.add_option("--host", host, "bridge host (transport=bridge)");
  app.add_option("--snoop-port", snoop_port, "HCI stream port (default 8872)");
  app.add_option("--inject-port", inject_port,
                 "HCI injection port (default 8873)");
  app.add_flag("--serve", serve,
               "serve the debug bridge ports (transport=sim)");
  app.add_option("--script", script_path, "run commands from a file and exit");
  app.add_option("--seed", seed_text, "seed for the security experiments");
  app.add_option("--history", history_path,
                 "history file (default $BTLAB_HISTORY or ~/.btlab_history)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) {
        std::cerr << "cannot open config: " << config_path << "\n";
        return 2;
      }
      nlohmann::json doc = nlohmann::json::parse(in);
      auto take = [&](const char* key, std::string& out, const CLI::Option* o) {
        if (doc.contains(key) && o->count() == 0) {
          out = doc.at(key).get<std::string>();
        }
      };
      take("profile", profile_path, app.get_option("--profile"));
      take("victim_profile", victim_profile_path,
           app.get_option("--victim-profile"));
      take("victim_mac", victim_mac_text, app.get_option("--victim-mac"));
      take("transport", transport, app.get_option("--transport"));
      take("host", host, app.get_option("--host"));
      take("seed", seed_text, app.get_option("--seed"));
      if (doc.contains("snoop_port") &&
          app.get_option("--snoop-port")->count() == 0) {
        snoop_port = doc.at("snoop_port").get<uint16_t>();
      }
      if (doc.contains("inject_port") &&
          app.get_option("--inject-port")->count() == 0) {
        inject_port = doc.at("inject_port").get<uint16_t>();
      }
      if (doc.contains("serve") && !serve) {
        serve = doc.at("serve").get<bool>();
      }
    }
    if (history_path.empty()) {
      if (const char* env = std::getenv("BTLAB_HISTORY")) {
        history_path = env;
      } else if (const char* home = std::getenv("HOME")) {
        history_path = std::string(home) + "/.btlab_history";
      }
    }

    sim::ControllerProfile profile = sim::ControllerProfile::load(profile_path);
    if (!mac_text.empty()) profile.mac_address = mac_text;

    cli::ReplOptions options;
    options.history_path = script_path.empty() ? history_path : "";
    options.seed = std::stoull(seed_text, nullptr, 0);
    options.interactive = script_path.empty();

    std::unique_ptr<sim::Controller> attacker;
    std::unique_ptr<sim::Controller> victim;
    std::unique_ptr<sim::Medium> medium;
    std::unique_ptr<core::Session> session;
    cli::WorldView world;
    std::unique_ptr<capture::BridgeServer> bridge;

    if (transport == "sim") {
      attacker = std::make_unique<sim::Controller>(profile);
      sim::ControllerProfile victim_profile =
          victim_profile_path.empty()
              ? sim::ControllerProfile::load(profile_path)
              : sim::ControllerProfile::load(victim_profile_path);
      victim_profile.mac_address = victim_mac_text;
      victim = std::make_unique<sim::Controller>(victim_profile);
      medium = std::make_unique<sim::Medium>();
      medium->attach(*attacker);
      medium->attach(*victim);
      session = std::make_unique<core::Session>(
          profile, std::make_unique<core::InProcessTransport>(*attacker));
      world.victim = victim.get();
      world.victim_mac = MacAddress::parse(victim_mac_text);
      if (serve) {
        bridge = std::make_unique<capture::BridgeServer>(*session, snoop_port,
                                                         inject_port);
        bridge->start();
        std::cerr << "bridge serving on 127.0.0.1:" << bridge->out_port()
                  << " (stream) and 127.0.0.1:" << bridge->in_port()
                  << " (inject)\n";
      }
    } else {
      session = std::make_unique<core::Session>(
          profile, std::make_unique<capture::BridgeClientTransport>(
                       host, snoop_port, inject_port));
    }

    cli::Repl repl(*session, world, std::cout, options);
    int code;
    if (!script_path.empty()) {
      std::ifstream script(script_path);
      if (!script) {
        std::cerr << "cannot open script: " << script_path << "\n";
        return 2;
      }
      code = repl.run(script);
    } else {
      code = repl.run(std::cin);
    }
    if (bridge) bridge->stop();
    return code;
  } catch (const Error& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 2;
  }
}
