// Training allocates and frees large activation buffers every step; the
// system allocator returns them to the OS and page-faults them back in.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() {
    std::process::exit(napool::harness::cli::run(std::env::args_os()));
}
