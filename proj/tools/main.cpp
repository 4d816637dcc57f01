#include <iostream>

#include "commands.hpp"
#include "promptinv/datasets.hpp"
#include "promptinv/sampling.hpp"
#include "promptinv/train.hpp"

int main(int argc, char** argv) {
    CLI::App app{"prompt inversion toolkit: reconstructs prompts from sampled model outputs"};
    app.require_subcommand(1);
    int exit_code = promptinv::cli::kExitOk;
    promptinv::cli::register_commands(app, exit_code);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? promptinv::cli::kExitOk : promptinv::cli::kExitUsage;
    } catch (const promptinv::BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return promptinv::cli::kExitBackend;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return promptinv::cli::kExitData;
    }
    return exit_code;
}
