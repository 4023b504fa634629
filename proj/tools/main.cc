#include <CLI11.hpp>
#include <cstdio>

int main(int argc, char** argv) {
  CLI::App app{"hex4d: dynamic radiance field optimizer"};
  app.require_subcommand(1);
  app.add_subcommand("train", "optimize a field from a config");
  app.add_subcommand("render", "render frames from a checkpoint");
  app.add_subcommand("eval", "compare rendered frames against references");
  app.add_subcommand("gen-scene", "generate a synthetic dataset");
  app.add_subcommand("enhance", "run the cross-frame enhancer over frames");
  CLI11_PARSE(app, argc, argv);
  std::fprintf(stderr, "not implemented yet\n");
  return 2;
}
