#include "storyline/cli/commands.hpp"

int main(int argc, char** argv) { return storyline::cli::dispatch(argc, argv); }
