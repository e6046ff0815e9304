#include "commands.hpp"

int main(int argc, char** argv) {
  mef::cli::retain_freed_memory();
  return mef::cli::run(argc, argv);
}
