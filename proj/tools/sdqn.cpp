#include "sdqn/error.hpp"
#include "sdqn/scenario.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <iostream>
#include <sstream>

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, sep)) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

/// LEVEL or LEVEL/CIPHERS; SELECTED_FIELDS takes its tags from `tags`.
sdqn::codec::EncryptionPolicy parse_policy_arg(const std::string& text, const std::string& default_ciphers,
                                               const std::string& tags) {
    const auto slash = text.find('/');
    sdqn::codec::EncryptionPolicy p;
    p.level = sdqn::codec::parse_level(text.substr(0, slash));
    p.ciphers = sdqn::codec::parse_cipher(slash == std::string::npos ? default_ciphers : text.substr(slash + 1));
    if (p.level == sdqn::codec::Level::selected_fields) {
        for (auto& t : split(tags, ',')) p.selected_tags.insert(std::move(t));
    }
    p.validate();
    return p;
}

int run_command(const std::string& path, std::optional<std::uint64_t> seed, std::optional<double> time_scale,
                const std::string& out_dir, std::optional<int> control_port, bool quiet) {
    const auto scenario = sdqn::scenario::load_scenario(path);
    sdqn::scenario::RunOptions options;
    options.seed = seed;
    options.time_scale = time_scale;
    options.out_dir = out_dir;
    options.control_port = control_port;
    if (!quiet) {
        options.on_tick = [&](double t) {
            if (static_cast<long long>(t) % 3600 == 0) {
                std::cerr << "\r  scenario hour " << static_cast<long long>(t) / 3600 << " of "
                          << static_cast<long long>(scenario.duration / 3600) << std::flush;
            }
        };
    }
    if (control_port) std::cerr << "control socket on 127.0.0.1:" << *control_port << "\n";
    const auto result = sdqn::scenario::run(scenario, options);
    if (!quiet) std::cerr << "\n";
    std::cout << result.summary_text();
    std::cout << "\nwall time " << result.wall_seconds << " s, outputs in " << out_dir << "\n";
    return result.exit_code;
}

int compare_command(const std::string& path, const std::string& policies, const std::string& ciphers,
                    const std::string& tags) {
    const auto scenario = sdqn::scenario::load_scenario(path);
    std::vector<sdqn::codec::EncryptionPolicy> list;
    for (const auto& item : split(policies, ',')) list.push_back(parse_policy_arg(item, ciphers, tags));
    const auto totals = sdqn::scenario::compare_policies(scenario, list);
    std::cout << sdqn::scenario::policy_table(totals);

    int status = 0;
    for (const auto& t : totals) {
        if (t.exit_code != 0) status = 2;
    }
    for (std::size_t i = 0; i < list.size(); ++i) {
        for (std::size_t j = 0; j < list.size(); ++j) {
            if (list[i].level == sdqn::codec::Level::data_only && list[j].level == sdqn::codec::Level::full &&
                list[i].ciphers == list[j].ciphers && totals[i].bits_used >= totals[j].bits_used) {
                std::cout << "FAIL " << totals[i].policy << " used no fewer bits than " << totals[j].policy << "\n";
                status = 1;
            }
        }
    }
    return status;
}

int switch_command(const std::string& node, const std::string& port, const std::string& fiber,
                   const std::string& host, int control_port) {
    httplib::Client client(host, control_port);
    client.set_read_timeout(std::chrono::seconds(40));
    const nlohmann::json body{{"node", node}, {"port", port}, {"fiber", fiber}};
    const auto res = client.Post("/switch", body.dump(), "application/json");
    if (!res) {
        std::cerr << "no live run answered on " << host << ":" << control_port << "\n";
        return 1;
    }
    std::cout << res->body << "\n";
    return res->status == 200 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Emulated software-defined QKD network"};
    app.require_subcommand(1);

    std::string scenario_path;
    std::optional<std::uint64_t> seed;
    std::optional<double> time_scale;
    std::string out_dir = "out";
    std::optional<int> control_port;
    bool quiet = false;
    auto* run = app.add_subcommand("run", "Run a scenario and write monitoring, events and key usage");
    run->add_option("scenario", scenario_path, "Scenario file")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "Override the scenario seed");
    run->add_option("--time-scale", time_scale, "Scenario seconds per wall second (0 = unpaced)");
    run->add_option("--out", out_dir, "Output directory");
    run->add_option("--control-port", control_port, "Serve manual switch commands on this local port");
    run->add_flag("--quiet", quiet, "No progress output");

    std::string policies = "FULL,DATA_ONLY,SELECTED_FIELDS";
    std::string ciphers = "OTP";
    std::string tags = "qkdl_id,attached_fiber,fiber_id";
    auto* compare = app.add_subcommand("compare-policies", "Total control-plane key bits per encryption policy");
    compare->add_option("scenario", scenario_path, "Scenario file")->required()->check(CLI::ExistingFile);
    compare->add_option("--policies", policies, "Comma-separated LEVEL[/CIPHERS] list");
    compare->add_option("--ciphers", ciphers, "Cipher set for entries without one");
    compare->add_option("--tags", tags, "Selected tags for SELECTED_FIELDS");

    std::string node;
    std::string port;
    std::string fiber;
    std::string host = "127.0.0.1";
    int switch_port = 7878;
    auto* sw = app.add_subcommand("switch", "Ask a live run's controller to cross-connect a port");
    sw->add_option("node", node, "Node whose switch to change")->required();
    sw->add_option("port", port, "Switch port")->required();
    sw->add_option("fiber", fiber, "Fiber to connect")->required();
    sw->add_option("--control-port", switch_port, "Control port of the live run");
    sw->add_option("--host", host, "Host of the live run");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run) return run_command(scenario_path, seed, time_scale, out_dir, control_port, quiet);
        if (*compare) return compare_command(scenario_path, policies, ciphers, tags);
        return switch_command(node, port, fiber, host, switch_port);
    } catch (const sdqn::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
