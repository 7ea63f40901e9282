// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#include "triebeam/bench.hpp"

int main(int argc, char** argv) { return triebeam::run_cli(argc, argv); }
