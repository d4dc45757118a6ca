#include <iostream>

#include "commands.hpp"
#include "probekit/common/error.hpp"

namespace {

enum ExitCode : int { kOk = 0, kUnexpected = 1, kInvalid = 2, kNumeric = 3 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"probekit: attentive probing of frozen features"};
  std::function<void()> action;
  probekit::cli::register_commands(app, action);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalid;
  }

  try {
    action();
    return kOk;
  } catch (const probekit::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const probekit::Error& e) {
    // validation, format, corruption and io problems all mean bad input
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "unexpected: " << e.what() << "\n";
    return kUnexpected;
  }
}
