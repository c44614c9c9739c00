#include <iostream>

#include "fibro/cli.hpp"

int main(int argc, char** argv) {
    return fibro::cli::dispatch(argc, argv, std::cout, std::cerr);
}
