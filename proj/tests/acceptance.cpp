// placeholder until the acceptance suite lands
int main(int argc, char**) { (void)argc; return 0; }
