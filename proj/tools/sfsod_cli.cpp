#include <cstdio>

int main() {
    std::puts("sfsod: placeholder");
    return 0;
}
