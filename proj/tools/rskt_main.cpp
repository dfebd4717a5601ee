#include "rskt/config.hpp"

#include <CLI11.hpp>

#include <cstdio>

int main(int argc, char** argv) {
    CLI::App app{"RSKT-Seg: open-vocabulary remote sensing segmentation"};
    app.require_subcommand(0, 1);
    CLI11_PARSE(app, argc, argv);
    std::puts("rskt: no subcommand given (see --help)");
    return 0;
}
