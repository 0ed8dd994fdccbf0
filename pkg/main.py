"""Main module for planar-doa - launches the HTTP API"""
import logging
import sys


def main():
    """Main function - runs the Flask API on localhost:5001"""
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    print("Starting planar-doa API on http://localhost:5001", file=sys.stderr)
    print("Press Ctrl+C to stop the server.\n", file=sys.stderr)

    from web.app import app

    try:
        app.run(host='127.0.0.1', port=5001, debug=False, use_reloader=False)
    except KeyboardInterrupt:
        print("\n\nServer stopped.", file=sys.stderr)
        sys.exit(0)
    except OSError as e:
        if "Address already in use" in str(e):
            print("\nError: Port 5001 is already in use!", file=sys.stderr)
        else:
            print(f"\nError starting server: {e}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
