// SPDX-License-Identifier: Apache-2.0

#include "eclip/cli.hpp"

int main(int argc, char** argv) { return eclip::cli::run(argc, argv); }
