#include "commands.hpp"

#include <fstream>

namespace promptinv::cli {

nlohmann::json load_run_config(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error("config is not valid JSON: " + path);
    return j;
}

void register_gen(CLI::App& app, int& exit_code);
void register_sample(CLI::App& app, int& exit_code);
void register_train(CLI::App& app, int& exit_code);
void register_invert(CLI::App& app, int& exit_code);
void register_eval(CLI::App& app, int& exit_code);
void register_bench(CLI::App& app, int& exit_code);

void register_commands(CLI::App& app, int& exit_code) {
    register_gen(app, exit_code);
    register_sample(app, exit_code);
    register_train(app, exit_code);
    register_invert(app, exit_code);
    register_eval(app, exit_code);
    register_bench(app, exit_code);
}

}  // namespace promptinv::cli
