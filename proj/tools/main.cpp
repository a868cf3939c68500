#include "cli.hpp"

int main(int argc, char** argv) { return style_mixer::cli::run({argv, argv + argc}); }
