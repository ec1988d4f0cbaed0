#include "qdebate/cli.hpp"

int main(int argc, char** argv) { return qdebate::cli::run(argc, argv); }
