#include <iostream>

#include "duple/app.hpp"

int main(int argc, char** argv) { return duple::run_cli(argc, argv, std::cout, std::cerr); }
