#include <iostream>

#include "cli_common.hpp"
#include "psim/error.hpp"

int main(int argc, char** argv) {
  using namespace psim::cli;
  CLI::App app{"psim: perceptual similarity toolkit"};
  app.require_subcommand(1);
  Context ctx;
  for (int i = 0; i < argc; ++i) ctx.argv.emplace_back(argv[i]);
  if (argc > 1) ctx.command = argv[1];
  if (argc > 2 && ctx.command == "analyze") ctx.command += std::string(" ") + argv[2];
  register_data_commands(app, ctx);
  register_model_commands(app, ctx);
  register_app_commands(app, ctx);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  } catch (const psim::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
