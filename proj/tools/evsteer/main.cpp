#include "cli.hpp"

#include <iostream>

#ifndef EVSTEER_DEFAULT_CONFIG
#define EVSTEER_DEFAULT_CONFIG ""
#endif

int main(int argc, char** argv)
{
    return evsteer::cli::run(argc, argv, std::cout, std::cerr, EVSTEER_DEFAULT_CONFIG);
}
