fn main() { println!("liftgeo"); }
