#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"gjscc: generative joint source-channel coding lab"};
    app.require_subcommand(1);
    CLI11_PARSE(app, argc, argv);
    return 0;
}
