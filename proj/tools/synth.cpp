// Writes a generated train/test goal-file pair.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "graphdqn/corpus.hpp"
#include "graphdqn/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate synthetic diagnosis goal files", "graphdqn_synth"};
  std::string kind = "separable", prefix = "synthetic";
  std::uint64_t seed = 0;
  app.add_option("--kind", kind, "separable | confusable")->check(CLI::IsMember({"separable", "confusable"}));
  app.add_option("--seed", seed, "Generator seed");
  app.add_option("--prefix", prefix, "Writes <prefix>_train.json and <prefix>_test.json");
  CLI11_PARSE(app, argc, argv);

  namespace syn = graphdqn::synthetic;
  const syn::Split split = kind == "separable" ? syn::separable({}, seed) : syn::confusable({}, seed);
  graphdqn::save_corpus(prefix + "_train.json", split.train);
  graphdqn::save_corpus(prefix + "_test.json", split.test);
  std::cout << "wrote " << split.train.size() << " train and " << split.test.size() << " test goals\n";
  return 0;
}
