// Regenerates the bundled toy fixture under data/toy/. Run from the repo
// root: build/tools/make_toy_fixture [out_dir]

#include <filesystem>
#include <fstream>
#include <iostream>

#include "toy_corpus.hpp"

int main(int argc, char** argv) {
  using namespace deskmt;
  std::filesystem::path out = argc > 1 ? argv[1] : "data/toy";
  std::filesystem::create_directories(out);

  auto task = toy::make_toy_task(20250801);
  write_parallel(task.train, (out / "train.es-quy.tsv").string());
  write_parallel(task.dev, (out / "dev.es-quy.tsv").string());
  write_parallel(task.test, (out / "test.es-quy.tsv").string());
  write_monolingual(task.mono_all[0], (out / "mono.quy.txt").string());
  write_monolingual(task.mono_all[1], (out / "mono.es.txt").string());

  std::ofstream src_only(out / "test.src.txt");
  for (const auto& p : task.test.pairs) src_only << p.src << '\n';
  std::ofstream ref_only(out / "test.ref.txt");
  for (const auto& p : task.test.pairs) ref_only << p.tgt << '\n';

  std::cout << "wrote toy fixture to " << out << "\n";
  return 0;
}
