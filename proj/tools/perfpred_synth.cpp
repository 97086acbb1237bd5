#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "perfpred/io.hpp"
#include "perfpred/registry.hpp"
#include "perfpred/synthdata.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic registry, scores and ground truth"};
  std::uint64_t seed = 0;
  std::size_t n_models = 92;
  double noise = 0.01;
  double missing = 0.1;
  std::string out = "synthetic";
  app.add_option("--seed", seed, "Generator seed");
  app.add_option("--models", n_models, "Number of models");
  app.add_option("--noise", noise, "Score noise standard deviation");
  app.add_option("--missing-rate", missing, "Probability an optional field is missing");
  app.add_option("--out", out, "Output directory");
  CLI11_PARSE(app, argc, argv);

  try {
    auto spec = perfpred::synth::default_spec(n_models, noise);
    spec.missing_rate = missing;
    const auto data = perfpred::synth::gen_registry(spec, seed);
    const std::filesystem::path dir(out);
    perfpred::io::write_file_atomic(dir / "registry.json", perfpred::serialize_registry(data.registry));
    perfpred::io::write_file_atomic(dir / "scores.csv", perfpred::serialize_scores(data.scores));
    perfpred::io::write_file_atomic(dir / "truth.json", data.truth.dump(2) + "\n");
    std::cout << "wrote " << data.registry.models.size() << " models and " << data.scores.size()
              << " scores to " << dir.string() << "\n";
  } catch (const perfpred::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == perfpred::ErrorKind::kIo ? 2 : 1;
  }
  return 0;
}
