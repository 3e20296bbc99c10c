#include "silverloop/cli.hpp"

int main(int argc, char** argv) { return silverloop::run(argc, argv); }
